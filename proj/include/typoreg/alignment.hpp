#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "typoreg/alchemy.hpp"
#include "typoreg/uriel_store.hpp"

namespace typoreg {

/// Mean-pooled sentence representations with the linguistic vector of each
/// sentence's language.
struct SentenceRepSet {
  Eigen::MatrixXd reps;     // N x d_rep
  std::vector<std::string> langs;
  Eigen::MatrixXd targets;  // N x d_uriel

  void validate() const;
};

SentenceRepSet collect_sentence_reps(const AlchemyModel& model, std::span<const EncodedExample> data,
                                     const UrielStore& store, std::span<const FeatureSet> sets,
                                     std::size_t batch_size = 64);

enum class AlignmentSolver { ClosedForm, GradientDescent };

struct AlignmentMethod {
  AlignmentSolver solver = AlignmentSolver::ClosedForm;
  double ridge = 1e-6;          // closed form
  double lr = 1e-2;             // gradient descent
  std::size_t iters = 2000;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;

  static AlignmentMethod closed_form(double ridge = 1e-6);
  static AlignmentMethod gradient_descent(double lr = 1e-2, std::size_t iters = 2000, std::uint64_t seed = 1);
  std::string name() const;
};

struct AlignmentFit {
  Eigen::MatrixXd W;  // d_uriel x d_rep
  Eigen::VectorXd b;  // d_uriel
  double r_squared = 0.0;
  double residual_mse = 0.0;  // (1/N) sum_i ||W s_i + b - u_i||^2
  AlignmentMethod method;
  std::size_t n = 0;
};

/// Affine map from representations to linguistic vectors.
AlignmentFit fit_alignment(const SentenceRepSet& data, const AlignmentMethod& method);

/// Coefficient of determination averaged uniformly over output columns.
/// Columns with zero target variance are skipped.
double r_squared(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

/// Rows W s + b.
Eigen::MatrixXd align_representations(const AlignmentFit& fit, const Eigen::MatrixXd& reps);

struct Pca2 {
  Eigen::MatrixXd scores;           // N x 2
  Eigen::Vector2d explained_ratio;  // share of total variance per component
};

/// Projection onto the top two principal directions. Each direction's sign
/// is fixed so its largest-magnitude loading is positive.
Pca2 pca_2d(const Eigen::MatrixXd& points);

/// `kind,lang,pc1,pc2` for the aligned sentence rows and one row per
/// language's linguistic vector, both projected by one shared PCA.
void write_pca_csv(const std::filesystem::path& path, const Eigen::MatrixXd& aligned,
                   std::span<const std::string> langs, const UrielStore& store, std::span<const FeatureSet> sets);

/// `method,n,d_rep,d_uriel,residual_mse,r_squared`.
void write_alignment_csv(const std::filesystem::path& path, std::span<const AlignmentFit> fits);

}  // namespace typoreg
