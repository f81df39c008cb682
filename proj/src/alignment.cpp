#include "typoreg/alignment.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "typoreg/autodiff/ops.hpp"
#include "typoreg/error.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

void SentenceRepSet::validate() const {
  const auto n = static_cast<std::size_t>(reps.rows());
  if (langs.size() != n || static_cast<std::size_t>(targets.rows()) != n) {
    throw ShapeError("sentence representation set: row counts differ (reps " + std::to_string(n) + ", langs " +
                     std::to_string(langs.size()) + ", targets " + std::to_string(targets.rows()) + ")");
  }
}

SentenceRepSet collect_sentence_reps(const AlchemyModel& model, std::span<const EncodedExample> data,
                                     const UrielStore& store, std::span<const FeatureSet> sets,
                                     std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  const auto d = static_cast<Eigen::Index>(model.encoder().config().d_model);
  const auto n = static_cast<Eigen::Index>(data.size());
  SentenceRepSet out;
  out.reps.resize(n, d);
  out.targets.resize(n, static_cast<Eigen::Index>(store.dim(sets)));
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const TokenBatch batch = make_batch(data, rows);
    const ad::Tensor pooled = pool_mean_masked(model.encoder().forward(batch), batch.mask);
    const auto v = pooled.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (Eigen::Index j = 0; j < d; ++j) {
        out.reps(static_cast<Eigen::Index>(start + r), j) = v[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
      }
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!store.has_language(data[i].lang)) {
      throw LookupError("sentence language '" + data[i].lang + "' has no linguistic vector");
    }
    const auto u = store.get_vector(data[i].lang, sets).values;
    for (std::size_t j = 0; j < u.size(); ++j) out.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u[j];
    out.langs.push_back(data[i].lang);
  }
  return out;
}

AlignmentMethod AlignmentMethod::closed_form(double ridge) {
  AlignmentMethod m;
  m.solver = AlignmentSolver::ClosedForm;
  m.ridge = ridge;
  return m;
}

AlignmentMethod AlignmentMethod::gradient_descent(double lr, std::size_t iters, std::uint64_t seed) {
  AlignmentMethod m;
  m.solver = AlignmentSolver::GradientDescent;
  m.lr = lr;
  m.iters = iters;
  m.seed = seed;
  return m;
}

std::string AlignmentMethod::name() const {
  return solver == AlignmentSolver::ClosedForm ? "closed_form" : "gradient_descent";
}

namespace {

double mean_row_sq_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  return (pred - target).rowwise().squaredNorm().mean();
}

void fit_closed_form(const SentenceRepSet& data, double ridge, AlignmentFit& fit) {
  if (ridge < 0.0) throw ArgumentError("ridge must be >= 0");
  const Eigen::RowVectorXd x_mean = data.reps.colwise().mean();
  const Eigen::RowVectorXd y_mean = data.targets.colwise().mean();
  const Eigen::MatrixXd xc = data.reps.rowwise() - x_mean;
  const Eigen::MatrixXd yc = data.targets.rowwise() - y_mean;
  const Eigen::Index p = xc.cols();

  Eigen::MatrixXd wt;  // d_rep x d_uriel
  if (ridge > 0.0) {
    Eigen::MatrixXd a = xc.transpose() * xc;
    a.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw NumericError("ridge normal matrix is not positive definite; increase the ridge term");
    }
    wt = ldlt.solve(xc.transpose() * yc);
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(xc);
    wt = cod.solve(yc);
    if (cod.rank() < p) {
      // Singular normal matrix: accept the minimum-norm solution only when it
      // reproduces the targets exactly.
      const double resid = (xc * wt - yc).norm();
      if (resid > 1e-9 * (1.0 + yc.norm())) {
        throw NumericError("normal matrix is singular (rank " + std::to_string(cod.rank()) + " < " +
                           std::to_string(p) + "); use a ridge term > 0");
      }
    }
  }
  fit.W = wt.transpose();
  fit.b = (y_mean - x_mean * wt).transpose();
}

void fit_gradient_descent(const SentenceRepSet& data, const AlignmentMethod& m, AlignmentFit& fit) {
  if (!(m.lr > 0.0)) throw ArgumentError("gradient descent needs lr > 0");
  const Eigen::Index n = data.reps.rows(), p = data.reps.cols(), q = data.targets.cols();
  std::mt19937_64 rng(m.seed);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  fit.W.resize(q, p);
  fit.b.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) fit.W(i, j) = u(rng);
  }
  for (Eigen::Index i = 0; i < q; ++i) fit.b(i) = u(rng);

  const double scale = 2.0 / static_cast<double>(n);
  Eigen::MatrixXd err(n, q), gw(q, p);
  Eigen::VectorXd gb(q);
  for (std::size_t it = 0; it < m.iters; ++it) {
    err.noalias() = data.reps * fit.W.transpose();
    err.rowwise() += fit.b.transpose();
    err -= data.targets;
    gw.noalias() = scale * err.transpose() * data.reps;
    gb = scale * err.colwise().sum().transpose();
    const double norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    if (!std::isfinite(norm)) throw NumericError("alignment gradient descent diverged");
    const double step = (m.clip_norm > 0.0 && norm > m.clip_norm) ? m.lr * m.clip_norm / norm : m.lr;
    fit.W -= step * gw;
    fit.b -= step * gb;
  }
}

}  // namespace

AlignmentFit fit_alignment(const SentenceRepSet& data, const AlignmentMethod& method) {
  data.validate();
  if (data.reps.rows() < 2) throw ArgumentError("alignment needs at least 2 sentences");
  AlignmentFit fit;
  fit.method = method;
  fit.n = static_cast<std::size_t>(data.reps.rows());
  if (method.solver == AlignmentSolver::ClosedForm) {
    fit_closed_form(data, method.ridge, fit);
  } else {
    fit_gradient_descent(data, method, fit);
  }
  const Eigen::MatrixXd pred = align_representations(fit, data.reps);
  fit.residual_mse = mean_row_sq_error(pred, data.targets);
  fit.r_squared = r_squared(pred, data.targets);
  return fit;
}

double r_squared(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("r_squared: prediction and target shapes differ");
  }
  if (target.rows() < 2) throw ArgumentError("r_squared needs at least 2 rows");
  double sum = 0.0;
  std::size_t used = 0;
  for (Eigen::Index j = 0; j < target.cols(); ++j) {
    const double mean = target.col(j).mean();
    const double ss_tot = (target.col(j).array() - mean).square().sum();
    if (ss_tot == 0.0) continue;
    const double ss_res = (target.col(j) - pred.col(j)).squaredNorm();
    sum += 1.0 - ss_res / ss_tot;
    ++used;
  }
  if (used == 0) throw NumericError("r_squared undefined: every target column has zero variance");
  return sum / static_cast<double>(used);
}

Eigen::MatrixXd align_representations(const AlignmentFit& fit, const Eigen::MatrixXd& reps) {
  if (reps.cols() != fit.W.cols()) {
    throw ShapeError("align_representations: expected " + std::to_string(fit.W.cols()) + " columns, got " +
                     std::to_string(reps.cols()));
  }
  Eigen::MatrixXd out = reps * fit.W.transpose();
  out.rowwise() += fit.b.transpose();
  return out;
}

Pca2 pca_2d(const Eigen::MatrixXd& points) {
  if (points.rows() < 2 || points.cols() < 1) throw ArgumentError("pca_2d needs at least 2 points");
  const Eigen::MatrixXd centered = points.rowwise() - points.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(points.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_2d: eigen decomposition failed");
  const Eigen::Index d = cov.cols();
  Eigen::MatrixXd dirs = Eigen::MatrixXd::Zero(d, 2);
  Pca2 out;
  const double total = eig.eigenvalues().sum();
  for (Eigen::Index k = 0; k < 2 && k < d; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);  // eigenvalues ascend
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    dirs.col(k) = v;
    out.explained_ratio(k) = total > 0.0 ? std::max(0.0, eig.eigenvalues()(d - 1 - k)) / total : 0.0;
  }
  if (d < 2) out.explained_ratio(1) = 0.0;
  out.scores = centered * dirs;
  return out;
}

void write_pca_csv(const std::filesystem::path& path, const Eigen::MatrixXd& aligned,
                   std::span<const std::string> langs, const UrielStore& store, std::span<const FeatureSet> sets) {
  if (static_cast<std::size_t>(aligned.rows()) != langs.size()) throw ShapeError("write_pca_csv: row/lang mismatch");
  std::map<std::string, std::vector<double>> vectors;
  for (const auto& l : langs) {
    if (!vectors.count(l)) vectors[l] = store.get_vector(l, sets).values;
  }
  const Eigen::Index n = aligned.rows();
  Eigen::MatrixXd all(n + static_cast<Eigen::Index>(vectors.size()), aligned.cols());
  all.topRows(n) = aligned;
  Eigen::Index r = n;
  for (const auto& [lang, v] : vectors) {
    if (static_cast<Eigen::Index>(v.size()) != aligned.cols()) throw ShapeError("write_pca_csv: vector width mismatch");
    for (Eigen::Index j = 0; j < aligned.cols(); ++j) all(r, j) = v[static_cast<std::size_t>(j)];
    ++r;
  }
  const Pca2 pca = pca_2d(all);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write PCA export " + path.string());
  out << "kind,lang,pc1,pc2\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    out << "lang_rep," << langs[static_cast<std::size_t>(i)] << ',' << format_double(pca.scores(i, 0)) << ','
        << format_double(pca.scores(i, 1)) << '\n';
  }
  r = n;
  for (const auto& [lang, v] : vectors) {
    out << "uriel," << lang << ',' << format_double(pca.scores(r, 0)) << ',' << format_double(pca.scores(r, 1)) << '\n';
    ++r;
  }
  if (!out) throw DataError("error writing PCA export " + path.string());
}

void write_alignment_csv(const std::filesystem::path& path, std::span<const AlignmentFit> fits) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write alignment report " + path.string());
  out << "method,n,d_rep,d_uriel,residual_mse,r_squared\n";
  for (const auto& f : fits) {
    out << f.method.name() << ',' << f.n << ',' << f.W.cols() << ',' << f.W.rows() << ','
        << format_double(f.residual_mse) << ',' << format_double(f.r_squared) << '\n';
  }
  if (!out) throw DataError("error writing alignment report " + path.string());
}

}  // namespace typoreg
