#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "typoreg/alignment.hpp"
#include "typoreg/error.hpp"

using namespace typoreg;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

SentenceRepSet realizable(Eigen::Index n, Eigen::Index p, Eigen::Index q, std::uint64_t seed, double noise = 0.0) {
  SentenceRepSet s;
  s.reps = gaussian(n, p, seed);
  const Eigen::MatrixXd a = gaussian(q, p, seed + 1);
  const Eigen::VectorXd c = gaussian(q, 1, seed + 2);
  s.targets = s.reps * a.transpose();
  s.targets.rowwise() += c.transpose();
  if (noise > 0.0) s.targets += noise * gaussian(n, q, seed + 3);
  for (Eigen::Index i = 0; i < n; ++i) s.langs.push_back("l" + std::to_string(i % 3));
  return s;
}

}  // namespace

TEST_CASE("closed form on identity design reproduces targets") {
  SentenceRepSet s;
  s.reps = Eigen::MatrixXd::Identity(2, 2);
  s.targets.resize(2, 2);
  s.targets << 2, 3, 4, 5;
  s.langs = {"a", "b"};
  const auto fit = fit_alignment(s, AlignmentMethod::closed_form(0.0));
  CHECK(fit.residual_mse < 1e-12);
  CHECK((align_representations(fit, s.reps) - s.targets).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("closed form recovers a realizable map") {
  const auto s = realizable(50, 4, 3, 7);
  const auto fit = fit_alignment(s, AlignmentMethod::closed_form(0.0));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit.residual_mse < 1e-18);
  CHECK(fit.n == 50);
  CHECK(fit.W.rows() == 3);
  CHECK(fit.W.cols() == 4);
}

TEST_CASE("singular design with zero ridge and inexact fit is a numeric error") {
  SentenceRepSet s;
  s.reps.resize(4, 2);
  s.reps << 1, 2, 2, 4, 3, 6, 4, 8;  // rank 1 after centering
  s.targets.resize(4, 1);
  s.targets << 0, 1, 0, 1;
  s.langs = {"a", "a", "b", "b"};
  CHECK_THROWS_AS(fit_alignment(s, AlignmentMethod::closed_form(0.0)), NumericError);
  CHECK_NOTHROW(fit_alignment(s, AlignmentMethod::closed_form(1e-3)));
  CHECK_THROWS_AS(fit_alignment(s, AlignmentMethod::closed_form(-1.0)), ArgumentError);
}

TEST_CASE("gradient descent approaches the closed-form solution") {
  const auto s = realizable(200, 4, 3, 11, 0.1);
  const auto cf = fit_alignment(s, AlignmentMethod::closed_form(0.0));
  const auto gd = fit_alignment(s, AlignmentMethod::gradient_descent());
  const double rel = (gd.W - cf.W).norm() / cf.W.norm();
  CHECK(rel < 1e-3);
  // Least-squares optimality.
  CHECK(cf.residual_mse <= gd.residual_mse + 1e-12);
  for (std::size_t iters : {10u, 100u, 500u}) {
    const auto partial = fit_alignment(s, AlignmentMethod::gradient_descent(1e-2, iters));
    CHECK(cf.residual_mse <= partial.residual_mse);
  }
}

TEST_CASE("gradient descent is deterministic given its seed") {
  const auto s = realizable(40, 3, 2, 5, 0.2);
  const auto a = fit_alignment(s, AlignmentMethod::gradient_descent(1e-2, 50, 9));
  const auto b = fit_alignment(s, AlignmentMethod::gradient_descent(1e-2, 50, 9));
  const auto c = fit_alignment(s, AlignmentMethod::gradient_descent(1e-2, 50, 10));
  CHECK(a.W == b.W);
  CHECK(a.b == b.b);
  CHECK(a.W != c.W);
}

TEST_CASE("gradient steps are clipped") {
  // Huge targets: unclipped lr 1e-2 steps would move b by far more than lr * 1.0.
  SentenceRepSet s = realizable(20, 2, 1, 3);
  s.targets.array() += 1e6;
  auto m = AlignmentMethod::gradient_descent(1e-2, 1, 4);
  const auto fit = fit_alignment(s, m);
  // Initial parameters are within 0.01 of zero; one clipped step moves at most lr.
  CHECK(fit.b.cwiseAbs().maxCoeff() <= 0.01 + 1e-2 + 1e-12);
  CHECK(fit.W.cwiseAbs().maxCoeff() <= 0.01 + 1e-2 + 1e-12);
}

TEST_CASE("r_squared examples") {
  Eigen::MatrixXd t(3, 1), p(3, 1);
  t << 1, 2, 3;
  p << 1, 2, 4;
  CHECK(r_squared(p, t) == doctest::Approx(0.5));
  CHECK(r_squared(t, t) == doctest::Approx(1.0));

  const Eigen::MatrixXd target = gaussian(10, 3, 2);
  Eigen::MatrixXd means = target;
  for (Eigen::Index j = 0; j < 3; ++j) means.col(j).setConstant(target.col(j).mean());
  CHECK(r_squared(means, target) == doctest::Approx(0.0).epsilon(1e-12));

  Eigen::MatrixXd worse = target;
  worse.col(0) = -target.col(0);
  CHECK(r_squared(worse, target) < 1.0);

  // Uniform average across columns, not variance weighted.
  Eigen::MatrixXd t2(3, 2), p2(3, 2);
  t2 << 1, 10, 2, 20, 3, 30;
  p2 << 1, 10, 2, 20, 4, 30;
  CHECK(r_squared(p2, t2) == doctest::Approx(0.75));
}

TEST_CASE("r_squared errors and constant columns") {
  Eigen::MatrixXd t(3, 2), p(3, 2);
  t << 1, 5, 2, 5, 3, 5;
  p << 1, 0, 2, 0, 4, 0;
  CHECK(r_squared(p, t) == doctest::Approx(0.5));  // constant column skipped
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(3, 2, 1.0);
  CHECK_THROWS_AS(r_squared(c, c), NumericError);
  CHECK_THROWS_AS(r_squared(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1)), ArgumentError);
  CHECK_THROWS_AS(r_squared(Eigen::MatrixXd::Zero(3, 1), Eigen::MatrixXd::Zero(3, 2)), ShapeError);
}

TEST_CASE("r_squared is invariant under row permutation") {
  const Eigen::MatrixXd t = gaussian(30, 4, 21);
  const Eigen::MatrixXd p = t + 0.3 * gaussian(30, 4, 22);
  std::vector<int> idx(30);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937 rng(1);
  std::shuffle(idx.begin(), idx.end(), rng);
  Eigen::MatrixXd tp(30, 4), pp(30, 4);
  for (int i = 0; i < 30; ++i) {
    tp.row(i) = t.row(idx[static_cast<std::size_t>(i)]);
    pp.row(i) = p.row(idx[static_cast<std::size_t>(i)]);
  }
  CHECK(r_squared(pp, tp) == doctest::Approx(r_squared(p, t)).epsilon(1e-12));
}

TEST_CASE("align_representations applies the affine map") {
  AlignmentFit fit;
  fit.W = Eigen::MatrixXd::Zero(2, 3);
  fit.b = Eigen::Vector2d(0.25, -1.5);
  const Eigen::MatrixXd out = align_representations(fit, gaussian(5, 3, 1));
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(out(i, 0) == 0.25);
    CHECK(out(i, 1) == -1.5);
  }
  CHECK_THROWS_AS(align_representations(fit, gaussian(5, 4, 1)), ShapeError);

  const auto s = realizable(30, 3, 2, 13, 0.5);
  const auto f = fit_alignment(s, AlignmentMethod::closed_form());
  const Eigen::MatrixXd pred = align_representations(f, s.reps);
  CHECK((pred - s.targets).rowwise().squaredNorm().mean() == doctest::Approx(f.residual_mse).epsilon(1e-12));
}

TEST_CASE("pca of a rank-1 cloud") {
  const Eigen::MatrixXd coeff = gaussian(40, 1, 3);
  Eigen::RowVectorXd dir(5);
  dir << 1, -2, 0.5, 3, 1;
  Eigen::MatrixXd pts = coeff * dir;
  pts += 1e-3 * gaussian(40, 5, 4);
  pts.rowwise() += Eigen::RowVectorXd::Constant(5, 7.0);
  const auto pca = pca_2d(pts);
  CHECK(pca.explained_ratio(0) > 0.99);
  CHECK(pca.scores.rows() == 40);
  CHECK(pca.scores.cols() == 2);
  // Scores are centred and follow the sign convention (largest loading is dir(3) > 0).
  CHECK(std::abs(pca.scores.col(0).mean()) < 1e-9);
  Eigen::Index best;
  coeff.col(0).maxCoeff(&best);
  CHECK(pca.scores(best, 0) > 0.0);
}

TEST_CASE("pca and alignment CSV exports") {
  const fs::path dir = fs::temp_directory_path() / "typoreg_align_test";
  fs::create_directories(dir);
  const auto store = typoreg::testing::toy_store(3, 4, 5);
  const std::vector<FeatureSet> sets{FeatureSet::Geo};
  const std::vector<std::string> langs{"l0", "l1", "l0", "l2", "l1"};
  write_pca_csv(dir / "pca.csv", gaussian(5, 4, 8), langs, store, sets);
  std::ifstream in(dir / "pca.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "kind,lang,pc1,pc2");
  int reps = 0, uriel = 0;
  while (std::getline(in, line)) {
    if (line.rfind("lang_rep,", 0) == 0) ++reps;
    if (line.rfind("uriel,", 0) == 0) ++uriel;
  }
  CHECK(reps == 5);
  CHECK(uriel == 3);

  const auto s = realizable(20, 3, 2, 1, 0.1);
  const std::vector<AlignmentFit> fits{fit_alignment(s, AlignmentMethod::closed_form()),
                                       fit_alignment(s, AlignmentMethod::gradient_descent(1e-2, 100))};
  write_alignment_csv(dir / "align.csv", fits);
  std::ifstream a(dir / "align.csv");
  std::getline(a, line);
  CHECK(line == "method,n,d_rep,d_uriel,residual_mse,r_squared");
  std::getline(a, line);
  CHECK(line.rfind("closed_form,20,3,2,", 0) == 0);
  std::getline(a, line);
  CHECK(line.rfind("gradient_descent,20,3,2,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("collect_sentence_reps matches recomputation") {
  using namespace typoreg::testing;
  const auto store = toy_store(3, 4, 2);
  const std::vector<FeatureSet> sets{FeatureSet::Geo};
  auto data = toy_examples(10, 4, 3, 6);
  data.push_back(data[0]);
  const AlchemyModel model(toy_model_config(0));
  const auto reps = collect_sentence_reps(model, data, store, sets, 4);
  CHECK(reps.reps.rows() == 11);
  CHECK(reps.langs.size() == 11);
  CHECK(reps.targets.cols() == 4);
  CHECK(reps.reps.row(0) == reps.reps.row(10));

  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::vector<std::size_t> row{i};
    const TokenBatch batch = make_batch(std::span<const EncodedExample>(data), row);
    const auto pooled = pool_mean_masked(model.encoder().forward(batch), batch.mask);
    for (Eigen::Index j = 0; j < reps.reps.cols(); ++j) {
      CHECK(reps.reps(static_cast<Eigen::Index>(i), j) ==
            doctest::Approx(pooled.at(static_cast<std::size_t>(j))).epsilon(1e-6));
    }
    const auto u = store.get_vector(data[i].lang, sets).values;
    for (std::size_t j = 0; j < u.size(); ++j) CHECK(reps.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == u[j]);
  }

  data[3].lang = "zz";
  CHECK_THROWS_AS(collect_sentence_reps(model, data, store, sets), LookupError);
}

TEST_CASE("row count mismatch is a shape error") {
  auto s = realizable(5, 2, 1, 1);
  s.langs.pop_back();
  CHECK_THROWS_AS(fit_alignment(s, AlignmentMethod::closed_form()), ShapeError);
}
