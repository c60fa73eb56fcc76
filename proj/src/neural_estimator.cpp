#include "qsync/neural_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "qsync/errors.hpp"

namespace qsync {

namespace {

constexpr int kModelFormatVersion = 1;

struct Batch {
  Eigen::MatrixXd hidden;   // B x L
  Eigen::MatrixXd outputs;  // B x O, raw
};

Batch forward_batch(const MlpModel& m, const Eigen::MatrixXd& x) {
  Batch b;
  b.hidden = ((x * m.w1.transpose()).rowwise() + m.b1.transpose()).unaryExpr([](double v) { return sigmoid(v); });
  b.outputs = (b.hidden * m.w2.transpose()).rowwise() + m.b2.transpose();
  return b;
}

// Softmax rows in place; returns the summed cross-entropy against one-hot y.
double softmax_cross_entropy(Eigen::MatrixXd& z, const Eigen::MatrixXd& y) {
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double zmax = z.row(r).maxCoeff();
    z.row(r).array() -= zmax;
    const double log_norm = std::log(z.row(r).array().exp().sum());
    loss -= (y.row(r).array() * (z.row(r).array() - log_norm)).sum();
    z.row(r) = (z.row(r).array() - log_norm).exp().matrix();
  }
  return loss;
}

// Summed loss over the batch and gradients of the mean loss.
double batch_gradient(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Gradients& g) {
  Batch b = forward_batch(m, x);
  const auto n = static_cast<double>(x.rows());
  double loss = 0.0;
  Eigen::MatrixXd delta_out;
  if (m.head == Head::classification) {
    loss = softmax_cross_entropy(b.outputs, y);
    delta_out = (b.outputs - y) / n;
  } else {
    delta_out = b.outputs - y;
    loss = 0.5 * delta_out.squaredNorm();
    delta_out /= n;
  }
  g.w2.noalias() = delta_out.transpose() * b.hidden;
  g.b2 = delta_out.colwise().sum().transpose();
  Eigen::MatrixXd delta_hidden = delta_out * m.w2;
  delta_hidden.array() *= b.hidden.array() * (1.0 - b.hidden.array());
  g.w1.noalias() = delta_hidden.transpose() * x;
  g.b1 = delta_hidden.colwise().sum().transpose();
  return loss;
}

double batch_loss(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Batch b = forward_batch(m, x);
  if (m.head == Head::classification) return softmax_cross_entropy(b.outputs, y);
  return 0.5 * (b.outputs - y).squaredNorm();
}

// Plain scalar forward pass in extended precision, kept apart from the Eigen
// batch path so the finite-difference reference does not share its code.
long double reference_loss(const MlpModel& m, const Eigen::VectorXd& x, const Eigen::VectorXd& target) {
  const auto L = m.hidden();
  const auto M = m.inputs();
  const auto O = m.outputs();
  std::vector<long double> h(L);
  for (std::size_t j = 0; j < L; ++j) {
    long double z = m.b1(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < M; ++i)
      z += static_cast<long double>(m.w1(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))) *
           x(static_cast<Eigen::Index>(i));
    h[j] = 1.0L / (1.0L + std::exp(-z));
  }
  std::vector<long double> out(O);
  for (std::size_t k = 0; k < O; ++k) {
    long double z = m.b2(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < L; ++j)
      z += static_cast<long double>(m.w2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) * h[j];
    out[k] = z;
  }
  if (m.head == Head::regression) {
    const long double d = out[0] - target(0);
    return 0.5L * d * d;
  }
  const long double zmax = *std::max_element(out.begin(), out.end());
  long double norm = 0.0L;
  for (auto z : out) norm += std::exp(z - zmax);
  const long double log_norm = zmax + std::log(norm);
  long double loss = 0.0L;
  for (std::size_t k = 0; k < O; ++k) loss -= target(static_cast<Eigen::Index>(k)) * (out[k] - log_norm);
  return loss;
}

std::vector<double*> parameter_pointers(MlpModel& m) {
  std::vector<double*> ptrs;
  auto add = [&](auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) ptrs.push_back(mat.data() + i);
  };
  add(m.w1);
  add(m.b1);
  add(m.w2);
  add(m.b2);
  return ptrs;
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  auto add = [&](const auto& mat) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) out.push_back(mat.data()[i]);
  };
  add(g.w1);
  add(g.b1);
  add(g.w2);
  add(g.b2);
  return out;
}

struct AdamState {
  Gradients m;
  Gradients v;
  std::size_t step = 0;
};

void zero_like(Gradients& g, const MlpModel& model) {
  g.w1 = Eigen::MatrixXd::Zero(model.w1.rows(), model.w1.cols());
  g.b1 = Eigen::VectorXd::Zero(model.b1.size());
  g.w2 = Eigen::MatrixXd::Zero(model.w2.rows(), model.w2.cols());
  g.b2 = Eigen::VectorXd::Zero(model.b2.size());
}

template <class P, class G>
void adam_update(P& param, const G& grad, G& m, G& v, double beta1, double beta2, double step_size, double eps) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  param.array() -= step_size * m.array() / (v.array().sqrt() + eps);
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* name) {
  if (!j.is_array() || j.size() != rows) throw ParseError(std::string("model field ") + name + " has wrong row count", 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = j.at(r).get<std::vector<double>>();
    if (row.size() != cols) throw ParseError(std::string("model field ") + name + " has wrong column count", 0);
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j, std::size_t size, const char* name) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != size) throw ParseError(std::string("model field ") + name + " has wrong length", 0);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double sample_stddev(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

const char* to_string(Head head) { return head == Head::classification ? "classification" : "regression"; }

Head head_from_string(const std::string& name) {
  if (name == "classification") return Head::classification;
  if (name == "regression") return Head::regression;
  throw ValidationError("unknown head '" + name + "'");
}

double TargetScaler::scale(double y) const { return max > min ? (y - min) / (max - min) : y - min; }

double TargetScaler::unscale(double z) const { return max > min ? min + z * (max - min) : z + min; }

TargetScaler TargetScaler::fit(std::span<const double> targets) {
  if (targets.empty()) throw DomainError("cannot fit a target scaler on no targets");
  const auto [lo, hi] = std::minmax_element(targets.begin(), targets.end());
  return {*lo, *hi};
}

bool MlpModel::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

bool MlpModel::operator==(const MlpModel& o) const {
  auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
  return same(w1, o.w1) && same(b1, o.b1) && same(w2, o.w2) && same(b2, o.b2) && head == o.head &&
         target == o.target && classes == o.classes && feature_scaler == o.feature_scaler && manifest == o.manifest;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MlpModel init_model(std::size_t inputs, std::size_t hidden, Head head, std::size_t outputs, std::uint64_t seed) {
  if (inputs < 1 || hidden < 1 || outputs < 1) throw DomainError("model dimensions must be >= 1");
  if (head == Head::regression && outputs != 1) throw DomainError("regression head has a single output");
  MlpModel m;
  m.head = head;
  std::mt19937_64 rng(mix_seed(seed, 0x1417));
  auto fill = [&](Eigen::MatrixXd& w, std::size_t rows, std::size_t fan_in) {
    const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-a, a);
    w.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  };
  fill(m.w1, hidden, inputs);
  fill(m.w2, outputs, hidden);
  m.b1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  m.b2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(outputs));
  return m;
}

Eigen::VectorXd hidden_activations(const MlpModel& model, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != model.inputs()) throw ShapeError("input length does not match model");
  return (model.w1 * x + model.b1).unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x) {
  Eigen::VectorXd out = model.w2 * hidden_activations(model, x) + model.b2;
  if (model.head == Head::classification) {
    out.array() -= out.maxCoeff();
    out = out.array().exp();
    out /= out.sum();
  } else {
    out(0) = model.target.unscale(out(0));
  }
  return out;
}

Eigen::MatrixXd output_layer(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.inputs()) throw ShapeError("input width does not match model");
  return forward_batch(model, x).outputs;
}

void TrainConfig::validate() const {
  if (hidden < 1) throw ValidationError("hidden units must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("Adam betas must lie in [0, 1)");
  if (!(tolerance >= 0.0)) throw ValidationError("tolerance must be >= 0");
}

json TrainConfig::to_json() const {
  return json{{"hidden", hidden},     {"max_epochs", max_epochs}, {"batch_size", batch_size},
              {"learning_rate", learning_rate}, {"beta1", beta1},  {"beta2", beta2},
              {"epsilon", epsilon},   {"tolerance", tolerance},   {"patience", patience},
              {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  const json known = c.to_json();
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ValidationError("unknown training config key: " + key);
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::MatrixXd encode_targets(const MlpModel& model, std::span<const double> labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (model.head == Head::classification) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(model.outputs()));
    for (Eigen::Index r = 0; r < n; ++r)
      y(r, static_cast<Eigen::Index>(class_index(model, labels[static_cast<std::size_t>(r)]))) = 1.0;
    return y;
  }
  Eigen::MatrixXd y(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) y(r, 0) = model.target.scale(labels[static_cast<std::size_t>(r)]);
  return y;
}

TrainResult train(MlpModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets, const TrainConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw DomainError("empty training set");
  if (static_cast<std::size_t>(x.cols()) != model.inputs()) throw ShapeError("training features do not match model inputs");
  if (targets.rows() != x.rows() || static_cast<std::size_t>(targets.cols()) != model.outputs())
    throw ShapeError("training targets do not match model outputs");

  const std::size_t batch = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(config.seed, 0xada));

  AdamState adam;
  zero_like(adam.m, model);
  zero_like(adam.v, model);
  Gradients grad;
  zero_like(grad, model);

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  Eigen::MatrixXd xb;
  Eigen::MatrixXd yb;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      if (batch == n) {
        epoch_loss += batch_gradient(model, x, targets, grad);
      } else {
        xb = select_rows(x, rows);
        yb = select_rows(targets, rows);
        epoch_loss += batch_gradient(model, xb, yb, grad);
      }
      ++adam.step;
      const double t = static_cast<double>(adam.step);
      const double step_size = config.learning_rate * std::sqrt(1.0 - std::pow(config.beta2, t)) /
                               (1.0 - std::pow(config.beta1, t));
      adam_update(model.w1, grad.w1, adam.m.w1, adam.v.w1, config.beta1, config.beta2, step_size, config.epsilon);
      adam_update(model.b1, grad.b1, adam.m.b1, adam.v.b1, config.beta1, config.beta2, step_size, config.epsilon);
      adam_update(model.w2, grad.w2, adam.m.w2, adam.v.w2, config.beta1, config.beta2, step_size, config.epsilon);
      adam_update(model.b2, grad.b2, adam.m.b2, adam.v.b2, config.beta1, config.beta2, step_size, config.epsilon);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss) || !model.all_finite())
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                                std::to_string(config.learning_rate),
                            epoch, config.learning_rate);
    result.loss_history.push_back(epoch_loss);
    stale = epoch_loss > best - config.tolerance ? stale + 1 : 0;
    best = std::min(best, epoch_loss);
    if (config.patience > 0 && stale >= config.patience) break;
  }
  model.manifest["train_config"] = config.to_json();
  model.manifest["epochs_run"] = result.loss_history.size();
  model.manifest["final_loss"] = result.loss_history.back();
  result.model = std::move(model);
  return result;
}

TrainResult train_classifier(const Eigen::MatrixXd& x, std::span<const double> labels, const TrainConfig& config) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ShapeError("features and labels differ in length");
  std::vector<double> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw DomainError("classification needs at least two classes");
  MlpModel model = init_model(static_cast<std::size_t>(x.cols()), config.hidden, Head::classification, classes.size(),
                              config.seed);
  model.classes = std::move(classes);
  const Eigen::MatrixXd y = encode_targets(model, labels);
  return train(std::move(model), x, y, config);
}

TrainResult train_regressor(const Eigen::MatrixXd& x, std::span<const double> targets, const TrainConfig& config) {
  if (static_cast<std::size_t>(x.rows()) != targets.size()) throw ShapeError("features and targets differ in length");
  MlpModel model = init_model(static_cast<std::size_t>(x.cols()), config.hidden, Head::regression, 1, config.seed);
  model.target = TargetScaler::fit(targets);
  const Eigen::MatrixXd y = encode_targets(model, targets);
  return train(std::move(model), x, y, config);
}

double example_loss(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target) {
  return batch_loss(model, x.transpose(), target.transpose());
}

Gradients loss_gradient(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target) {
  if (static_cast<std::size_t>(x.size()) != model.inputs() || static_cast<std::size_t>(target.size()) != model.outputs())
    throw ShapeError("example does not match model shape");
  Gradients g;
  batch_gradient(model, x.transpose(), target.transpose(), g);
  return g;
}

double gradient_check(const MlpModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target,
                      const GradientFn& analytic, double step) {
  const std::vector<double> g = flatten(analytic(model, x, target));
  MlpModel probe = model;
  const auto params = parameter_pointers(probe);
  if (params.size() != g.size()) throw ShapeError("analytic gradient has the wrong number of entries");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i];
    const double original = *p;
    *p = original + step;
    const long double up = reference_loss(probe, x, target);
    *p = original - step;
    const long double down = reference_loss(probe, x, target);
    *p = original;
    const auto fd = static_cast<double>((up - down) / (2.0L * static_cast<long double>(step)));
    const double dev = std::abs(g[i] - fd) / std::max(1e-12, std::abs(g[i]) + std::abs(fd));
    worst = std::max(worst, dev);
  }
  return worst;
}

std::vector<std::size_t> predict_classes(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (model.head != Head::classification) throw ValidationError("model does not have a classification head");
  const Eigen::MatrixXd z = output_layer(model, x);
  std::vector<std::size_t> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c)
      if (z(r, c) > z(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
  }
  return out;
}

std::vector<double> predict_labels(const MlpModel& model, const Eigen::MatrixXd& x) {
  std::vector<double> out;
  for (std::size_t c : predict_classes(model, x)) out.push_back(model.classes.at(c));
  return out;
}

std::vector<double> predict_values(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (model.head != Head::regression) throw ValidationError("model does not have a regression head");
  const Eigen::MatrixXd z = output_layer(model, x);
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) out[static_cast<std::size_t>(r)] = model.target.unscale(z(r, 0));
  return out;
}

std::size_t class_index(const MlpModel& model, double label) {
  for (std::size_t c = 0; c < model.classes.size(); ++c)
    if (std::abs(model.classes[c] - label) <= 1e-12 * (1.0 + std::abs(label))) return c;
  throw ValidationError("label " + format_double(label) + " is not one of the model's classes");
}

double classify_error(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const double> labels) {
  if (labels.empty()) throw DomainError("empty test set");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ShapeError("features and labels differ in length");
  const auto predicted = predict_classes(model, x);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predicted[i] != class_index(model, labels[i])) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(const MlpModel& model, const Eigen::MatrixXd& x,
                                                       std::span<const double> labels) {
  const std::size_t k = model.classes.size();
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(k, 0));
  const auto predicted = predict_classes(model, x);
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[class_index(model, labels[i])][predicted[i]];
  return counts;
}

double nme(std::span<const double> predictions, std::span<const double> truths) {
  if (truths.empty()) throw DomainError("empty test set");
  if (predictions.size() != truths.size()) throw ShapeError("predictions and truths differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!(truths[i] > 0.0)) throw DomainError("NME needs strictly positive true values");
    sum += std::abs(predictions[i] - truths[i]) / truths[i];
  }
  return sum / static_cast<double>(truths.size());
}

double regress_nme(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const double> truths) {
  for (double t : truths)
    if (!(t > 0.0)) throw DomainError("NME needs strictly positive true values");
  return nme(predict_values(model, x), truths);
}

EvalReport fit_and_evaluate(const LabeledDataset& ds, std::span<const std::size_t> train_rows,
                            std::span<const std::size_t> test_rows, LabelKey key, Head head, const TrainConfig& config,
                            MlpModel* trained) {
  const Eigen::MatrixXd x_train = feature_matrix(ds, train_rows);
  const Eigen::MatrixXd x_test = feature_matrix(ds, test_rows);
  const auto y_train = label_values(ds, train_rows, key);
  const auto y_test = label_values(ds, test_rows, key);
  const Eigen::MatrixXd others[] = {x_test};
  StandardizedSets sets = standardize(x_train, others);

  TrainResult fit = head == Head::classification ? train_classifier(sets.train.values(), y_train, config)
                                                 : train_regressor(sets.train.values(), y_train, config);
  fit.model.feature_scaler = sets.scaler;

  EvalReport report;
  report.head = head;
  report.test_size = test_rows.size();
  const Eigen::MatrixXd& xt = sets.others[0].values();
  if (head == Head::classification) {
    report.failure_rate = classify_error(fit.model, xt, y_test);
    report.confusion = confusion_matrix(fit.model, xt, y_test);
  } else {
    report.nme = regress_nme(fit.model, xt, y_test);
  }
  if (trained) *trained = std::move(fit.model);
  return report;
}

CrossValidationReport cross_validate(const LabeledDataset& ds, std::span<const std::size_t> indices, LabelKey key,
                                     Head head, std::size_t k, const TrainConfig& config, std::uint64_t fold_seed) {
  const auto folds = kfold(indices.size(), k, fold_seed);
  CrossValidationReport out;
  std::vector<double> metrics;
  for (const auto& fold : folds) {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
    for (std::size_t i : fold.train) train_rows.push_back(indices[i]);
    for (std::size_t i : fold.test) test_rows.push_back(indices[i]);
    out.folds.push_back(fit_and_evaluate(ds, train_rows, test_rows, key, head, config));
    metrics.push_back(out.folds.back().metric());
  }
  out.mean = std::accumulate(metrics.begin(), metrics.end(), 0.0) / static_cast<double>(metrics.size());
  out.stddev = sample_stddev(metrics, out.mean);
  return out;
}

std::vector<double> weight_profile(const MlpModel& model) {
  const Eigen::VectorXd profile = model.w1.cwiseAbs().colwise().mean().transpose();
  return {profile.data(), profile.data() + profile.size()};
}

json model_to_json(const MlpModel& m) {
  json j{{"format", "qsync-mlp"},
         {"format_version", kModelFormatVersion},
         {"head", to_string(m.head)},
         {"inputs", m.inputs()},
         {"hidden", m.hidden()},
         {"outputs", m.outputs()},
         {"activation", "sigmoid"},
         {"w1", matrix_to_json(m.w1)},
         {"b1", std::vector<double>(m.b1.data(), m.b1.data() + m.b1.size())},
         {"w2", matrix_to_json(m.w2)},
         {"b2", std::vector<double>(m.b2.data(), m.b2.data() + m.b2.size())},
         {"target_scaler", {{"min", m.target.min}, {"max", m.target.max}}},
         {"classes", m.classes},
         {"manifest", m.manifest}};
  j["feature_scaler"] = m.feature_scaler ? m.feature_scaler->to_json() : json(nullptr);
  return j;
}

MlpModel model_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "qsync-mlp") throw ParseError("not a qsync model file", 0);
    if (j.value("format_version", 0) != kModelFormatVersion) throw ParseError("unsupported model format version", 0);
    MlpModel m;
    m.head = head_from_string(j.at("head").get<std::string>());
    const auto inputs = j.at("inputs").get<std::size_t>();
    const auto hidden = j.at("hidden").get<std::size_t>();
    const auto outputs = j.at("outputs").get<std::size_t>();
    m.w1 = matrix_from_json(j.at("w1"), hidden, inputs, "w1");
    m.b1 = vector_from_json(j.at("b1"), hidden, "b1");
    m.w2 = matrix_from_json(j.at("w2"), outputs, hidden, "w2");
    m.b2 = vector_from_json(j.at("b2"), outputs, "b2");
    m.target.min = j.at("target_scaler").at("min").get<double>();
    m.target.max = j.at("target_scaler").at("max").get<double>();
    m.classes = j.at("classes").get<std::vector<double>>();
    if (j.contains("feature_scaler") && !j.at("feature_scaler").is_null())
      m.feature_scaler = Scaler::from_json(j.at("feature_scaler"));
    m.manifest = j.value("manifest", json::object());
    if (m.head == Head::classification && m.classes.size() != outputs)
      throw ParseError("class list does not match output count", 0);
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what(), 0);
  } catch (const ValidationError& e) {
    throw ParseError(std::string("malformed model file: ") + e.what(), 0);
  }
}

void save_model(const MlpModel& model, const std::filesystem::path& path) { write_json_file(path, model_to_json(model)); }

MlpModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

}  // namespace qsync
