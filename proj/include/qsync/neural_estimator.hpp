#pragma once

// Single-hidden-layer perceptron: hidden = sigmoid(W1 x + b1), out = W2 hidden + b2.
// The regression head reads the single raw output (min-max target scaling is
// undone on prediction); the classification head takes a softmax over one
// output per class.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qsync/dataset_forge.hpp"
#include "qsync/io.hpp"

namespace qsync {

enum class Head { regression, classification };

const char* to_string(Head head);
Head head_from_string(const std::string& name);

/// Affine map of regression targets onto [0, 1] over the training range.
struct TargetScaler {
  double min = 0.0;
  double max = 1.0;

  double scale(double y) const;
  double unscale(double z) const;
  static TargetScaler fit(std::span<const double> targets);

  bool operator==(const TargetScaler&) const = default;
};

struct MlpModel {
  Eigen::MatrixXd w1;  // hidden x inputs
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // outputs x hidden
  Eigen::VectorXd b2;
  Head head = Head::regression;
  TargetScaler target;
  std::vector<double> classes;  // label value of each class output
  std::optional<Scaler> feature_scaler;
  json manifest = json::object();

  std::size_t inputs() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t outputs() const { return static_cast<std::size_t>(w2.rows()); }
  bool all_finite() const;

  bool operator==(const MlpModel& other) const;
};

double sigmoid(double x);

/// Uniform(-a, a) weights with a = sqrt(3 / fan_in), zero biases.
MlpModel init_model(std::size_t inputs, std::size_t hidden, Head head, std::size_t outputs, std::uint64_t seed);

/// Class probabilities (classification) or the unscaled prediction (regression).
Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x);

/// Hidden-layer activations for one input.
Eigen::VectorXd hidden_activations(const MlpModel& model, const Eigen::VectorXd& x);

/// Raw output-layer values for a batch (rows are examples).
Eigen::MatrixXd output_layer(const MlpModel& model, const Eigen::MatrixXd& x);

struct TrainConfig {
  std::size_t hidden = 50;
  std::size_t max_epochs = 2000;
  /// 0 selects full-batch training.
  std::size_t batch_size = 200;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Stop after `patience` consecutive epochs improving the best loss by less than this.
  double tolerance = 1e-6;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;  // mean loss per epoch
};

/// Encoded targets: one-hot rows (classification) or scaled values in a
/// single column (regression).
Eigen::MatrixXd encode_targets(const MlpModel& model, std::span<const double> labels);

/// Minimizes cross-entropy or mean squared error with mini-batch Adam.
/// Throws DivergenceError on a non-finite loss.
TrainResult train(MlpModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets, const TrainConfig& config);

/// Fits class list or target scaler from `labels`, initializes and trains.
TrainResult train_classifier(const Eigen::MatrixXd& x, std::span<const double> labels, const TrainConfig& config);
TrainResult train_regressor(const Eigen::MatrixXd& x, std::span<const double> targets, const TrainConfig& config);

/// Loss of a single example against its encoded target row.
double example_loss(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target);

/// Parameter-shaped gradient of example_loss.
struct Gradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

Gradients loss_gradient(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target);

using GradientFn = std::function<Gradients(const MlpModel&, const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// Max over parameters of |g - g_fd| / max(1e-12, |g| + |g_fd|), where g_fd
/// is a central difference of example_loss with step `step`.
double gradient_check(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target,
                      const GradientFn& analytic = loss_gradient, double step = 1e-5);

/// argmax class index per row; ties go to the lowest index.
std::vector<std::size_t> predict_classes(const MlpModel& model, const Eigen::MatrixXd& x);
std::vector<double> predict_labels(const MlpModel& model, const Eigen::MatrixXd& x);
std::vector<double> predict_values(const MlpModel& model, const Eigen::MatrixXd& x);

std::size_t class_index(const MlpModel& model, double label);

/// Fraction of misclassified rows. Throws DomainError on an empty set.
double classify_error(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const double> labels);

/// confusion[true][predicted] counts.
std::vector<std::vector<std::size_t>> confusion_matrix(const MlpModel& model, const Eigen::MatrixXd& x,
                                                       std::span<const double> labels);

/// Normalized mean error (1/T) sum |pred - truth| / truth. Truths must be > 0.
double nme(std::span<const double> predictions, std::span<const double> truths);
double regress_nme(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const double> truths);

struct EvalReport {
  Head head = Head::classification;
  double failure_rate = 0.0;  // classification
  double nme = 0.0;           // regression
  std::size_t test_size = 0;
  std::vector<std::vector<std::size_t>> confusion;

  double metric() const { return head == Head::classification ? failure_rate : nme; }
};

struct CrossValidationReport {
  std::vector<EvalReport> folds;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across folds
};

/// Trains one model per fold complement on standardized features (scaler
/// fitted on each fold's training rows) and reports the fold metrics.
CrossValidationReport cross_validate(const LabeledDataset& ds, std::span<const std::size_t> indices, LabelKey key,
                                     Head head, std::size_t k, const TrainConfig& config, std::uint64_t fold_seed);

/// Train on `train`, evaluate on `test`, with standardization fitted on `train`.
EvalReport fit_and_evaluate(const LabeledDataset& ds, std::span<const std::size_t> train,
                            std::span<const std::size_t> test, LabelKey key, Head head, const TrainConfig& config,
                            MlpModel* trained = nullptr);

/// Mean over hidden units of |W1[:, bin]|.
std::vector<double> weight_profile(const MlpModel& model);

json model_to_json(const MlpModel& model);
MlpModel model_from_json(const json& j);
void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace qsync
