#include "qsync/quantum_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "qsync/errors.hpp"

namespace qsync {

namespace {

using Matrix2c = Eigen::Matrix<cplx, 2, 2>;

constexpr cplx kI{0.0, 1.0};

Matrix2c pauli_x() {
  Matrix2c m;
  m << 0.0, 1.0, 1.0, 0.0;
  return m;
}

Matrix2c pauli_z() {
  Matrix2c m;
  m << 1.0, 0.0, 0.0, -1.0;
  return m;
}

Matrix4c kron(const Matrix2c& a, const Matrix2c& b) {
  Matrix4c out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

Superop kron(const Matrix4c& a, const Matrix4c& b) {
  Superop out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out.block<4, 4>(4 * i, 4 * j) = a(i, j) * b;
  return out;
}

VecState vec(const Matrix4c& m) { return Eigen::Map<const VecState>(m.data()); }

Matrix4c unvec(const VecState& v) { return Eigen::Map<const Matrix4c>(v.data()); }

// Tr(O X) written as a row functional on vec(X).
Eigen::Matrix<cplx, 1, 16> trace_functional(const Matrix4c& op) {
  Matrix4c t = op.transpose();
  return Eigen::Map<const Eigen::Matrix<cplx, 1, 16>>(t.data());
}

double wrap_phase(double phi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  phi = std::fmod(phi, two_pi);
  if (phi <= -std::numbers::pi) phi += two_pi;
  if (phi > std::numbers::pi) phi -= two_pi;
  return phi;
}

struct Diagonalization {
  Superop vectors;
  Superop inverse;
  Eigen::Matrix<cplx, 16, 1> values;
};

// Eigendecomposition L = V diag(values) V^-1. Returns false when the basis is
// too ill-conditioned to reproduce L to working precision.
bool diagonalize(const Superop& generator, Diagonalization& out, double residual_tol) {
  Eigen::ComplexEigenSolver<Superop> solver(generator);
  if (solver.info() != Eigen::Success) return false;
  out.vectors = solver.eigenvectors();
  out.values = solver.eigenvalues();
  Eigen::FullPivLU<Superop> lu(out.vectors);
  if (!lu.isInvertible()) return false;
  out.inverse = lu.inverse();
  const Superop rebuilt = out.vectors * out.values.asDiagonal() * out.inverse;
  const double scale = 1.0 + generator.norm();
  return (rebuilt - generator).norm() <= residual_tol * scale;
}

Superop step_propagator(const Superop& generator, double dt) {
  Diagonalization d;
  if (diagonalize(generator, d, 1e-13)) {
    Eigen::Matrix<cplx, 16, 1> phases = (d.values * dt).array().exp();
    Superop u = d.vectors * phases.asDiagonal() * d.inverse;
    // Trace preservation of the step map: vec(I)^T U = vec(I)^T.
    const auto tr = trace_functional(Matrix4c::Identity());
    if ((tr * u - tr).norm() <= 1e-14) return u;
  }
  Superop scaled = generator * dt;
  return scaled.exp();
}

void require_setup(const ProbeSetup& setup) { setup.validate(); }

}  // namespace

void ProbeSetup::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v <= 0.0)
      throw DomainError(std::string(name) + " must be finite and > 0, got " + std::to_string(v));
  };
  check(omega_p, "omega_p");
  check(lambda, "lambda");
  check(gamma0, "gamma0");
  check(s, "s");
  check(rate_prefactor, "rate_prefactor");
}

double spectral_density(double omega, double gamma0, double s) {
  if (!(omega > 0.0)) throw DomainError("spectral density requested at non-positive frequency");
  return gamma0 * std::pow(omega, s);
}

ClosedForm closed_form(double omega_p, double lambda) {
  const double w_plus = 1.0 + omega_p;
  const double w_minus = 1.0 - omega_p;
  const double a = std::hypot(2.0 * lambda, w_minus);
  const double b = std::hypot(2.0 * lambda, w_plus);
  ClosedForm cf;
  cf.e1 = -(a + b) / 2.0;
  cf.e2 = (a - b) / 2.0;
  // atan2(2 lambda, w) / 2 == arcsin(2 lambda / sqrt(4 lambda^2 + w^2)) / 2 for w >= 0.
  cf.theta_plus = std::atan2(2.0 * lambda, w_plus) / 2.0;
  cf.theta_minus = std::atan2(2.0 * lambda, std::abs(w_minus)) / 2.0;
  cf.theta_minus_physical = std::atan2(2.0 * lambda, w_minus) / 2.0;
  return cf;
}

Matrix4c hamiltonian(const ProbeSetup& setup) {
  const Matrix2c id = Matrix2c::Identity();
  return 0.5 * kron(pauli_z(), id) + 0.5 * setup.omega_p * kron(id, pauli_z()) +
         setup.lambda * kron(pauli_x(), pauli_x());
}

Matrix4c observable_matrix(Observable which) {
  const Matrix2c id = Matrix2c::Identity();
  return which == Observable::system_x ? kron(pauli_x(), id) : kron(id, pauli_x());
}

Eigensystem eigensystem(const ProbeSetup& setup) {
  require_setup(setup);
  const Eigen::Matrix4d h = hamiltonian(setup).real();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(h);
  if (solver.info() != Eigen::Success) throw NumericalError("H_S diagonalization failed");

  Eigensystem eig;
  for (int k = 0; k < 4; ++k) eig.energies[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
  eig.eigenvectors = solver.eigenvectors().cast<cplx>();

  const ClosedForm cf = closed_form(setup.omega_p, setup.lambda);
  eig.e1 = cf.e1;
  eig.e2 = cf.e2;
  eig.theta_plus = cf.theta_plus;
  eig.theta_minus = cf.theta_minus;
  eig.theta_minus_physical = cf.theta_minus_physical;

  const double mix = cf.theta_plus + cf.theta_minus_physical;
  const double c = std::cos(mix);
  const double sn = std::sin(mix);
  eig.gamma1 = setup.rate_prefactor * c * c * spectral_density(std::abs(cf.e1), setup.gamma0, setup.s);
  eig.gamma2 = setup.rate_prefactor * sn * sn * spectral_density(std::abs(cf.e2), setup.gamma0, setup.s);
  return eig;
}

Matrix4c Liouvillian::apply(const Matrix4c& rho) const { return unvec(generator * vec(rho)); }

Liouvillian build_liouvillian(const ProbeSetup& setup) {
  return build_liouvillian(setup, eigensystem(setup));
}

Liouvillian build_liouvillian(const ProbeSetup& setup, const Eigensystem& basis) {
  require_setup(setup);
  const ClosedForm cf = closed_form(setup.omega_p, setup.lambda);
  if (std::abs(std::abs(cf.e1) - std::abs(cf.e2)) <= kFrequencyGroupingTolerance)
    throw DegeneracyError("transition frequencies |E1| and |E2| coincide");

  Liouvillian L;
  L.setup = setup;
  L.hamiltonian = hamiltonian(setup);

  const Matrix4c& v = basis.eigenvectors;
  const Matrix4c coupling = v.adjoint() * observable_matrix(Observable::system_x) * v;

  // A(w) = sum_{E_j - E_i = w} <i|sx_q|j> |i><j|, grouped within tolerance.
  struct Transition {
    double frequency;
    int lower;
    int upper;
  };
  std::vector<Transition> transitions;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double w = basis.energies[static_cast<std::size_t>(j)] - basis.energies[static_cast<std::size_t>(i)];
      if (w > kFrequencyGroupingTolerance) transitions.push_back({w, i, j});
    }
  std::sort(transitions.begin(), transitions.end(),
            [](const Transition& x, const Transition& y) { return x.frequency < y.frequency; });

  std::vector<JumpChannel> channels;
  for (std::size_t k = 0; k < transitions.size();) {
    std::size_t end = k + 1;
    while (end < transitions.size() &&
           transitions[end].frequency - transitions[k].frequency <= kFrequencyGroupingTolerance)
      ++end;
    JumpChannel ch;
    double sum = 0.0;
    for (std::size_t t = k; t < end; ++t) {
      const auto& tr = transitions[t];
      sum += tr.frequency;
      ch.jump += coupling(tr.lower, tr.upper) * v.col(tr.lower) * v.col(tr.upper).adjoint();
    }
    ch.frequency = sum / static_cast<double>(end - k);
    // Parity-forbidden groups have identically vanishing matrix elements.
    if (ch.jump.norm() > 1e-12) {
      ch.rate = setup.rate_prefactor * spectral_density(ch.frequency, setup.gamma0, setup.s);
      channels.push_back(ch);
    }
    k = end;
  }
  L.channels = std::move(channels);

  const Matrix4c id = Matrix4c::Identity();
  const Matrix4c& h = L.hamiltonian;
  L.generator = -kI * (kron(id, h) - kron(h.transpose(), id));
  for (const auto& ch : L.channels) {
    const Matrix4c& a = ch.jump;
    const Matrix4c ada = a.adjoint() * a;
    L.generator += ch.rate * (kron(a.conjugate(), a) - 0.5 * kron(id, ada) - 0.5 * kron(ada.transpose(), id));
  }
  return L;
}

double TimeGrid::step() const {
  return points > 1 ? (stop - start) / static_cast<double>(points - 1) : 0.0;
}

double TimeGrid::at(std::size_t i) const {
  if (points <= 1) return start;
  if (i + 1 == points) return stop;
  return start + step() * static_cast<double>(i);
}

std::vector<double> TimeGrid::times() const {
  std::vector<double> t(points);
  for (std::size_t i = 0; i < points; ++i) t[i] = at(i);
  return t;
}

TimeGrid TimeGrid::canonical() { return {0.0, 100.0, 101}; }

TimeGrid TimeGrid::dense() { return {0.0, 100.0, 1001}; }

Matrix4c plus_plus_state() {
  Vector4c psi = Vector4c::Constant(0.5);
  return psi * psi.adjoint();
}

Matrix4c ground_state_projector(const Eigensystem& eig) {
  const Vector4c g = eig.eigenvectors.col(0);
  return g * g.adjoint();
}

void validate_density_matrix(const Matrix4c& rho, double tolerance) {
  if (!rho.allFinite()) throw ValidationError("density matrix has non-finite entries");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > tolerance)
    throw ValidationError("density matrix is not Hermitian");
  if (std::abs(rho.trace() - 1.0) > tolerance) throw ValidationError("density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Matrix4c> solver(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
  if (solver.eigenvalues().minCoeff() < -tolerance)
    throw ValidationError("density matrix is not positive semidefinite");
}

std::vector<Matrix4c> evolve(const Liouvillian& L, const Matrix4c& rho0, const TimeGrid& grid) {
  validate_density_matrix(rho0);
  if (grid.points == 0 || !(grid.stop >= grid.start)) throw ValidationError("invalid time grid");

  std::vector<Matrix4c> states;
  states.reserve(grid.points);
  VecState state = vec(rho0);
  states.push_back(rho0);
  if (grid.points == 1) return states;

  const Superop u = step_propagator(L.generator, grid.step());
  constexpr double drift_tol = 1e-8;
  for (std::size_t i = 1; i < grid.points; ++i) {
    state = u * state;
    Matrix4c rho = unvec(state);
    if (!rho.allFinite() || std::abs(rho.trace() - 1.0) > drift_tol)
      throw StabilityError("trace drift during propagation at t=" + std::to_string(grid.at(i)));
    Eigen::SelfAdjointEigenSolver<Matrix4c> solver(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().minCoeff() < -drift_tol)
      throw StabilityError("positivity lost during propagation at t=" + std::to_string(grid.at(i)));
    states.push_back(rho);
  }
  return states;
}

TrajectoryPair propagate(const Liouvillian& L, const Matrix4c& rho0, const TimeGrid& grid) {
  const auto states = evolve(L, rho0, grid);
  const Matrix4c xq = observable_matrix(Observable::system_x);
  const Matrix4c xp = observable_matrix(Observable::probe_x);
  TrajectoryPair out;
  out.system.observable = Observable::system_x;
  out.probe.observable = Observable::probe_x;
  out.system.times = grid.times();
  out.probe.times = out.system.times;
  out.system.values.reserve(states.size());
  out.probe.values.reserve(states.size());
  for (const auto& rho : states) {
    out.system.values.push_back((rho * xq).trace().real());
    out.probe.values.push_back((rho * xp).trace().real());
  }
  return out;
}

std::vector<SpectralMode> spectral_decomposition(const Liouvillian& L, const Matrix4c& rho0) {
  validate_density_matrix(rho0);
  Diagonalization d;
  if (!diagonalize(L.generator, d, 1e-10))
    throw DefectiveGeneratorError("Liouvillian is not diagonalizable to working precision");
  Eigen::JacobiSVD<Superop> svd(d.vectors);
  const auto& sv = svd.singularValues();
  if (sv(15) <= 0.0 || sv(0) / sv(15) > 1e10)
    throw DefectiveGeneratorError("Liouvillian eigenbasis is ill-conditioned");

  const VecState weights = d.inverse * vec(rho0);
  const auto tq = trace_functional(observable_matrix(Observable::system_x));
  const auto tp = trace_functional(observable_matrix(Observable::probe_x));

  std::vector<SpectralMode> modes(16);
  for (int k = 0; k < 16; ++k) {
    const cplx w = weights(k);
    modes[static_cast<std::size_t>(k)] = {d.values(k), (tq * d.vectors.col(k))(0) * w,
                                          (tp * d.vectors.col(k))(0) * w};
  }
  std::stable_sort(modes.begin(), modes.end(), [](const SpectralMode& a, const SpectralMode& b) {
    if (a.eigenvalue.real() != b.eigenvalue.real()) return a.eigenvalue.real() > b.eigenvalue.real();
    return a.eigenvalue.imag() < b.eigenvalue.imag();
  });
  return modes;
}

AsymptoticParams asymptotic_params(const ProbeSetup& setup, const Matrix4c& rho0) {
  return asymptotic_params(build_liouvillian(setup), rho0);
}

AsymptoticParams asymptotic_params(const Liouvillian& L, const Matrix4c& rho0) {
  const ClosedForm cf = closed_form(L.setup.omega_p, L.setup.lambda);
  const std::array<double, 2> targets{std::abs(cf.e1), std::abs(cf.e2)};
  const double separation = targets[0] - targets[1];
  constexpr double match_tol = 1e-7;
  if (separation <= 2.0 * match_tol) throw DegeneracyError("the two oscillation frequencies coincide");

  const auto modes = spectral_decomposition(L, rho0);
  AsymptoticParams out;
  for (std::size_t m = 0; m < 2; ++m) {
    // modes are sorted slowest first, so the first match is the slowest one.
    auto it = std::find_if(modes.begin(), modes.end(), [&](const SpectralMode& mode) {
      return std::abs(mode.eigenvalue.imag() - targets[m]) <= match_tol;
    });
    if (it == modes.end())
      throw DegeneracyError("no oscillatory mode at |E" + std::to_string(m + 1) + "|");
    ModeParams& p = out.modes[m];
    p.frequency = targets[m];
    p.rate = -2.0 * it->eigenvalue.real();
    p.eigenvalue = it->eigenvalue;
    p.amplitude_q = it->amplitude_q;
    p.amplitude_p = it->amplitude_p;
  }
  return out;
}

TrajectoryPair asymptotic_trajectory(const AsymptoticParams& params, const TimeGrid& grid) {
  TrajectoryPair out;
  out.system.observable = Observable::system_x;
  out.probe.observable = Observable::probe_x;
  out.system.times = grid.times();
  out.probe.times = out.system.times;
  for (double t : out.system.times) {
    double q = 0.0;
    double p = 0.0;
    for (const auto& mode : params.modes) {
      const cplx phase = std::exp(mode.eigenvalue * t);
      q += 2.0 * (mode.amplitude_q * phase).real();
      p += 2.0 * (mode.amplitude_p * phase).real();
    }
    out.system.values.push_back(q);
    out.probe.values.push_back(p);
  }
  return out;
}

double sync_boundary_s(double omega_p, double lambda) {
  if (!(omega_p > 0.0) || !(lambda > 0.0)) throw DomainError("sync boundary needs omega_p, lambda > 0");
  const ClosedForm cf = closed_form(omega_p, lambda);
  const double ratio = std::abs(cf.e1) / std::abs(cf.e2);
  if (std::abs(ratio - 1.0) <= kFrequencyGroupingTolerance)
    throw DegeneracyError("|E1| = |E2|: boundary undefined");
  const double t = std::tan(cf.theta_plus + cf.theta_minus_physical);
  return std::log(t * t) / std::log(ratio);
}

double sync_boundary_omega_p(double s, double lambda, double lo, double hi) {
  double f_lo = sync_boundary_s(lo, lambda) - s;
  const double f_hi = sync_boundary_s(hi, lambda) - s;
  if (f_lo * f_hi > 0.0) throw DomainError("boundary frequency not bracketed for s=" + std::to_string(s));
  for (int iter = 0; iter < 200 && hi - lo > 1e-15; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = sync_boundary_s(mid, lambda) - s;
    if ((f_mid <= 0.0) == (f_lo <= 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

bool DominantMode::in_phase() const { return std::abs(phase_difference) < std::numbers::pi / 2.0; }

DominantMode dominant_mode(const ProbeSetup& setup, const Matrix4c& rho0) {
  const Liouvillian L = build_liouvillian(setup);
  const AsymptoticParams params = asymptotic_params(L, rho0);
  const double r1 = params.modes[0].rate;
  const double r2 = params.modes[1].rate;
  if (std::abs(r1 - r2) <= 1e-6 * std::max(std::abs(r1), std::abs(r2)))
    throw NoDominantModeError("asymptotic decay rates coincide: no dominant mode");

  const std::size_t idx = r1 < r2 ? 0 : 1;
  const ModeParams& m = params.modes[idx];
  if (std::abs(m.amplitude_q) < 1e-14 || std::abs(m.amplitude_p) < 1e-14)
    throw NoDominantModeError("dominant mode has no weight in one of the observables");

  DominantMode out;
  out.mode = static_cast<int>(idx) + 1;
  out.omega_sync = std::abs(m.eigenvalue.imag());
  out.phase_difference = wrap_phase(std::arg(m.amplitude_q) - std::arg(m.amplitude_p));
  const Eigensystem eig = eigensystem(setup);
  const int larger_rate_mode = eig.gamma1 > eig.gamma2 ? 1 : 2;
  out.matches_larger_rate_reading = out.mode == larger_rate_mode;
  return out;
}

}  // namespace qsync
