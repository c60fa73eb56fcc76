#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "qsync/dataset_forge.hpp"
#include "qsync/errors.hpp"
#include "qsync/neural_estimator.hpp"

using namespace qsync;
using doctest::Approx;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

void randomize_biases(MlpModel& m, std::mt19937_64& rng) {
  m.b1 = random_vector(m.b1.size(), rng, 0.5);
  m.b2 = random_vector(m.b2.size(), rng, 0.5);
}

double accuracy(const MlpModel& m, const Eigen::MatrixXd& x, const std::vector<double>& labels) {
  return 1.0 - classify_error(m, x, labels);
}

TrainConfig full_batch(std::size_t hidden, std::size_t epochs, double lr) {
  TrainConfig c;
  c.hidden = hidden;
  c.max_epochs = epochs;
  c.batch_size = 0;
  c.learning_rate = lr;
  c.patience = epochs;  // no early stop
  c.tolerance = 0.0;
  return c;
}

MlpModel constant_class_model(std::size_t inputs, std::size_t classes, std::size_t winner) {
  MlpModel m = init_model(inputs, 2, Head::classification, classes, 1);
  m.w1.setZero();
  m.w2.setZero();
  m.b2.setZero();
  m.b2(static_cast<Eigen::Index>(winner)) = 1.0;
  m.classes.clear();
  for (std::size_t c = 0; c < classes; ++c) m.classes.push_back(static_cast<double>(c));
  return m;
}

}  // namespace

TEST_CASE("initialization") {
  const MlpModel a = init_model(51, 50, Head::classification, 3, 7);
  CHECK(a.w1.rows() == 50);
  CHECK(a.w1.cols() == 51);
  CHECK(a.w2.rows() == 3);
  CHECK(a.w2.cols() == 50);
  CHECK(a.b1.isZero());
  CHECK(a.b2.isZero());
  CHECK(a.all_finite());
  CHECK(init_model(51, 50, Head::classification, 3, 7) == a);
  CHECK_FALSE(init_model(51, 50, Head::classification, 3, 8) == a);

  const double bound = std::sqrt(3.0 / 51.0);
  CHECK(a.w1.cwiseAbs().maxCoeff() <= bound);
  // Uniform(-a, a) has sigma = a / sqrt(3).
  const double sigma = bound / std::sqrt(3.0);
  const double n = static_cast<double>(a.w1.size());
  CHECK(std::abs(a.w1.mean()) < 3 * sigma / std::sqrt(n));
  const double var = (a.w1.array() - a.w1.mean()).square().mean();
  CHECK(var == Approx(sigma * sigma).epsilon(0.1));
}

TEST_CASE("forward pass") {
  std::mt19937_64 rng(2);
  MlpModel r = init_model(51, 10, Head::regression, 1, 1);
  r.w1.setZero();
  r.w2.setZero();
  for (int i = 0; i < 5; ++i) CHECK(forward(r, random_vector(51, rng))(0) == Approx(r.target.unscale(0.0)));
  r.target = TargetScaler{0.0, 1.0};
  CHECK(forward(r, random_vector(51, rng))(0) == 0.0);

  MlpModel c = init_model(51, 10, Head::classification, 3, 1);
  c.w1.setZero();
  c.w2.setZero();
  c.classes = {0.5, 1.0, 2.0};
  const Eigen::VectorXd p = forward(c, random_vector(51, rng));
  for (int k = 0; k < 3; ++k) CHECK(p(k) == Approx(1.0 / 3).epsilon(1e-14));

  const MlpModel m = init_model(51, 10, Head::classification, 3, 4);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd h = hidden_activations(m, random_vector(51, rng, 10.0));
    CHECK((h.array() > 0).all());
    CHECK((h.array() < 1).all());
  }
  CHECK_THROWS_AS(forward(m, Eigen::VectorXd::Zero(50)), ShapeError);
}

TEST_CASE("target scaler") {
  const std::vector<double> y{0.5, 1.25, 2.0};
  const TargetScaler t = TargetScaler::fit(y);
  CHECK(t.scale(0.5) == 0.0);
  CHECK(t.scale(2.0) == 1.0);
  CHECK(t.unscale(t.scale(1.3)) == Approx(1.3).epsilon(1e-15));
}

TEST_CASE("linearly separable toy problem") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd x(200, 2);
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    double a = u(rng), b = u(rng);
    // Keep a margin around the line a + b = 0.
    while (std::abs(a + b) < 0.2) a = u(rng), b = u(rng);
    x(i, 0) = a;
    x(i, 1) = b;
    y.push_back(a + b > 0 ? 1.0 : 0.0);
  }
  const TrainResult r = train_classifier(x, y, full_batch(5, 500, 0.05));
  CHECK(accuracy(r.model, x, y) == 1.0);
  CHECK(r.loss_history.back() < r.loss_history.front());
  // Same seed, same weights.
  CHECK(train_classifier(x, y, full_batch(5, 500, 0.05)).model == r.model);
}

TEST_CASE("XOR") {
  Eigen::MatrixXd x(4, 2);
  x << 0, 0, 0, 1, 1, 0, 1, 1;
  const std::vector<double> y{0, 1, 1, 0};
  bool solved = false;
  for (std::uint64_t seed = 0; seed < 5 && !solved; ++seed) {
    TrainConfig c = full_batch(4, 5000, 0.05);
    c.seed = seed;
    solved = accuracy(train_classifier(x, y, c).model, x, y) == 1.0;
  }
  CHECK(solved);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(13);
  int worst_case = -1;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const bool cls = i % 2 == 0;
    const std::size_t inputs = 3 + static_cast<std::size_t>(i % 5);
    const std::size_t outputs = cls ? 3 : 1;
    MlpModel m = init_model(inputs, 4 + static_cast<std::size_t>(i % 3), cls ? Head::classification : Head::regression,
                            outputs, static_cast<std::uint64_t>(i));
    randomize_biases(m, rng);
    const Eigen::VectorXd x = random_vector(static_cast<Eigen::Index>(inputs), rng);
    Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(outputs));
    if (cls)
      t(i % 3) = 1.0;
    else
      t(0) = std::uniform_real_distribution<double>(0, 1)(rng);
    const double d = gradient_check(m, x, t);
    if (d > worst) worst = d, worst_case = i;
  }
  CHECK_MESSAGE(worst < 1e-6, "worst case ", worst_case);
}

TEST_CASE("gradient check at a perfect fit") {
  MlpModel m = init_model(4, 3, Head::regression, 1, 3);
  m.w2.setZero();
  m.b2(0) = 0.4;
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(4, 0.3);
  const Eigen::VectorXd t = Eigen::VectorXd::Constant(1, 0.4);
  CHECK(example_loss(m, x, t) == 0.0);
  CHECK(gradient_check(m, x, t) <= 1e-6);
}

TEST_CASE("gradient check catches a sign bug") {
  std::mt19937_64 rng(17);
  MlpModel m = init_model(5, 4, Head::classification, 3, 2);
  randomize_biases(m, rng);
  const Eigen::VectorXd x = random_vector(5, rng);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(3);
  t(1) = 1.0;
  const GradientFn broken = [](const MlpModel& model, const Eigen::VectorXd& xi, const Eigen::VectorXd& ti) {
    Gradients g = loss_gradient(model, xi, ti);
    g.w2 = -g.w2;
    return g;
  };
  CHECK(gradient_check(m, x, t, broken) > 1e-3);
}

TEST_CASE("classification metrics") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(9, 2);
  const std::vector<double> y{0, 1, 2, 0, 1, 2, 0, 1, 2};
  const MlpModel always0 = constant_class_model(2, 3, 0);
  CHECK(classify_error(always0, x, y) == Approx(2.0 / 3));
  const auto cm = confusion_matrix(always0, x, y);
  CHECK(cm[0][0] == 3);
  CHECK(cm[1][0] == 3);
  CHECK(cm[2][0] == 3);
  CHECK(cm[1][1] == 0);

  // Ties go to the lowest index.
  MlpModel tie = constant_class_model(2, 3, 0);
  tie.b2.setConstant(0.5);
  for (std::size_t k : predict_classes(tie, x)) CHECK(k == 0);

  CHECK_THROWS_AS(classify_error(always0, Eigen::MatrixXd(0, 2), std::vector<double>{}), DomainError);

  SUBCASE("perfect lookup on its own training set") {
    Eigen::MatrixXd xs(3, 3);
    xs.setIdentity();
    const std::vector<double> ys{0.5, 1.0, 2.0};
    const TrainResult r = train_classifier(xs, ys, full_batch(6, 400, 0.05));
    CHECK(classify_error(r.model, xs, ys) == 0.0);
    CHECK(predict_labels(r.model, xs) == ys);
  }
  SUBCASE("test-order invariance") {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd xr(30, 4);
    std::vector<double> yr;
    for (int i = 0; i < 30; ++i) {
      xr.row(i) = random_vector(4, rng).transpose();
      yr.push_back(static_cast<double>(i % 3));
    }
    const MlpModel m = [&] {
      MlpModel mm = init_model(4, 5, Head::classification, 3, 9);
      mm.classes = {0, 1, 2};
      return mm;
    }();
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd xp(30, 4);
    std::vector<double> yp;
    for (int i = 0; i < 30; ++i) {
      xp.row(i) = xr.row(perm[static_cast<std::size_t>(i)]);
      yp.push_back(yr[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    CHECK(classify_error(m, xr, yr) == classify_error(m, xp, yp));
  }
}

TEST_CASE("normalized mean error") {
  CHECK(nme(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}) == 0.0);
  CHECK(nme(std::vector<double>{1.5}, std::vector<double>{2.0}) == Approx(0.25).epsilon(1e-15));
  const std::vector<double> truth{0.5, 0.8, 1.3, 2.0};
  std::vector<double> pred;
  for (double t : truth) pred.push_back(1.1 * t);
  CHECK(nme(pred, truth) == Approx(0.10).epsilon(1e-13));
  CHECK_THROWS_AS(nme(std::vector<double>{1.0}, std::vector<double>{0.0}), DomainError);
  CHECK_THROWS_AS(nme(std::vector<double>{1.0}, std::vector<double>{-1.0}), DomainError);
  CHECK_THROWS_AS(nme(std::vector<double>{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(nme(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ValidationError);
}

TEST_CASE("training behaviour") {
  std::mt19937_64 rng(21);
  Eigen::MatrixXd x(60, 3);
  std::vector<double> y;
  for (int i = 0; i < 60; ++i) {
    x.row(i) = random_vector(3, rng).transpose();
    y.push_back(0.5 + 0.3 * x(i, 0) * x(i, 0) + 0.2 * std::tanh(x(i, 1)) + 1.0);
  }
  SUBCASE("full batch ignores example order") {
    const TrainConfig c = full_batch(6, 200, 0.01);
    const MlpModel a = train_regressor(x, y, c).model;
    std::vector<int> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    Eigen::MatrixXd xp(60, 3);
    std::vector<double> yp;
    for (int i = 0; i < 60; ++i) {
      xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
      yp.push_back(y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    const MlpModel b = train_regressor(xp, yp, c).model;
    CHECK((a.w1 - b.w1).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((a.w2 - b.w2).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((a.b1 - b.b1).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("loss decreases and early stopping records its epoch count") {
    TrainConfig c;
    c.hidden = 6;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    const TrainResult r = train_regressor(x, y, c);
    CHECK(r.loss_history.back() < r.loss_history.front());
    CHECK(r.model.manifest.at("epochs_run").get<std::size_t>() == r.loss_history.size());
    CHECK(r.loss_history.size() <= c.max_epochs);
    CHECK(train_regressor(x, y, c).model == r.model);
  }
  SUBCASE("divergence is reported") {
    // Adam steps are bounded by the step size, so only an absurd one overflows.
    TrainConfig c = full_batch(6, 50, 1e200);
    try {
      train_regressor(x, y, c);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
  SUBCASE("bad configs") {
    TrainConfig c;
    c.hidden = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.learning_rate = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_THROWS_AS(TrainConfig::from_json(json{{"hiden", 3}}), ValidationError);
    CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).to_json() == TrainConfig{}.to_json());
  }
}

TEST_CASE("cross-validation") {
  // Every example duplicated five times with identical labels per feature
  // vector; each fold then sees the same data distribution.
  LabeledDataset ds;
  for (int rep = 0; rep < 5; ++rep)
    for (int i = 0; i < 4; ++i) {
      Spectrum sp;
      sp.moduli.assign(kSpectrumBins, 0.0);
      sp.moduli[static_cast<std::size_t>(i)] = 1.0;
      sp.label = SpectrumLabel{1.0, 0.5 + 0.5 * i, 0.01};
      ds.examples.push_back(sp);
    }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto report = cross_validate(ds, idx, LabelKey::s, Head::classification, 5, full_batch(8, 300, 0.05), 1);
  REQUIRE(report.folds.size() == 5);
  double sum = 0.0;
  for (const auto& f : report.folds) sum += f.metric();
  CHECK(report.mean == Approx(sum / 5));
  CHECK(report.stddev == 0.0);
  CHECK(report.mean == 0.0);
}

TEST_CASE("weight profile") {
  const MlpModel m = init_model(kSpectrumBins, 50, Head::regression, 1, 3);
  const auto profile = weight_profile(m);
  CHECK(profile.size() == kSpectrumBins);
  std::vector<double> sorted = profile;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  for (double p : profile) CHECK(p < 3 * median);
}

TEST_CASE("trained regressor weights concentrate on the spectral peaks") {
  DatasetConfig c;
  c.omega_p_min = 0.95;
  c.omega_p_max = 1.05;
  c.omega_p_count = 20;
  c.s_values.clear();
  for (int i = 0; i < 76; ++i) c.s_values.push_back(0.5 + 0.02 * i);
  const LabeledDataset ds = generate(c, 4);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  TrainConfig tc;
  tc.hidden = 20;
  MlpModel model;
  fit_and_evaluate(ds, idx, idx, LabelKey::s, Head::regression, tc, &model);
  const auto profile = weight_profile(model);
  const Eigen::Index top = std::max_element(profile.begin(), profile.end()) - profile.begin();
  const double w = bin_frequency(1);
  const Eigensystem e = eigensystem(ProbeSetup{1.0, 0.2, 0.01, 1.0});
  const double k1 = std::abs(e.e1) / w;
  const double k2 = std::abs(e.e2) / w;
  CHECK_MESSAGE((std::abs(top - k1) <= 2.5 || std::abs(top - k2) <= 2.5), "argmax bin ", top, " peaks ", k1, ", ", k2);
}

TEST_CASE("model persistence") {
  std::mt19937_64 rng(8);
  MlpModel m = init_model(6, 4, Head::classification, 3, 5);
  randomize_biases(m, rng);
  m.classes = {0.5, 1.0, 2.0};
  m.feature_scaler = Scaler({1, 2, 3, 4, 5, 6}, {1, 1, 2, 2, 3, 3});
  m.manifest["note"] = "x";
  CHECK(model_from_json(model_to_json(m)) == m);
  const auto dir = std::filesystem::temp_directory_path() / "qsync_test_model";
  std::filesystem::create_directories(dir);
  save_model(m, dir / "m.json");
  const MlpModel back = load_model(dir / "m.json");
  CHECK(back == m);
  const Eigen::VectorXd x = random_vector(6, rng);
  CHECK(forward(back, x) == forward(m, x));
  CHECK_THROWS_AS(model_from_json(json{{"format", "other"}}), ParseError);
  CHECK_THROWS_AS(load_model(dir / "missing.json"), IoError);
}
