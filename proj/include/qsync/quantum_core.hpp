#pragma once

// Dynamics of a dissipating system qubit q coupled to a non-dissipating probe
// qubit p:
//
//   H_S = (w_q/2) sz_q + (w_p/2) sz_p + lambda sx_q sx_p,      w_q = 1
//
// with a zero-temperature global secular Lindblad dissipator whose bath has
// the power-law spectral density J(w) = gamma0 w^s. Basis ordering is
// |q p> with index 2*q + p and |up> = 0, so sz|up> = +|up>.

#include <array>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include <Eigen/Core>

namespace qsync {

using cplx = std::complex<double>;
using Matrix4c = Eigen::Matrix<cplx, 4, 4>;
using Vector4c = Eigen::Matrix<cplx, 4, 1>;
using Superop = Eigen::Matrix<cplx, 16, 16>;
using VecState = Eigen::Matrix<cplx, 16, 1>;

/// Multiplier between J(w) and the Lindblad transition rate. The Born-Markov
/// golden-rule rate for J(w) = sum_k g_k^2 delta(w - W_k) is 2 pi J(w).
inline constexpr double kGoldenRulePrefactor = 2.0 * std::numbers::pi;

/// Physical parameters in units of w_q. Temperature is fixed at zero.
struct ProbeSetup {
  double omega_p = 1.0;
  double lambda = 0.2;
  double gamma0 = 0.01;
  double s = 1.0;
  double rate_prefactor = kGoldenRulePrefactor;

  /// Throws DomainError unless every parameter is finite and positive.
  void validate() const;
};

/// J(w) = gamma0 * w^s. Throws DomainError for w <= 0.
double spectral_density(double omega, double gamma0, double s);

/// Closed-form spectrum of H_S. `theta_minus` is the arcsin form
/// asin(2 lambda / a)/2 (always in (0, pi/4]); `theta_minus_physical` = atan2(2 lambda, w_q - w_p)/2
/// is the true mixing angle of the odd-parity sector and agrees with
/// `theta_minus` for w_p <= w_q.
struct ClosedForm {
  double e1 = 0.0;
  double e2 = 0.0;
  double theta_plus = 0.0;
  double theta_minus = 0.0;
  double theta_minus_physical = 0.0;
};

ClosedForm closed_form(double omega_p, double lambda);

struct Eigensystem {
  std::array<double, 4> energies{};  // ascending
  Matrix4c eigenvectors = Matrix4c::Zero();  // column k <-> energies[k]
  double e1 = 0.0;
  double e2 = 0.0;
  double theta_plus = 0.0;
  double theta_minus = 0.0;
  double theta_minus_physical = 0.0;
  /// Effective decay rates rate_prefactor * cos^2(theta+ + theta-) J(|E1|) and
  /// rate_prefactor * sin^2(theta+ + theta-) J(|E2|), physical branch of theta-.
  double gamma1 = 0.0;
  double gamma2 = 0.0;
};

Eigensystem eigensystem(const ProbeSetup& setup);

struct JumpChannel {
  double frequency = 0.0;  // transition frequency w > 0
  Matrix4c jump = Matrix4c::Zero();  // A(w), computational basis
  double rate = 0.0;  // rate_prefactor * J(w)
};

/// Lindblad generator acting on column-major vectorized 4x4 density matrices.
struct Liouvillian {
  ProbeSetup setup;
  Matrix4c hamiltonian = Matrix4c::Zero();
  Superop generator = Superop::Zero();
  std::vector<JumpChannel> channels;

  Matrix4c apply(const Matrix4c& rho) const;
};

/// Tolerance (units of w_q) for grouping degenerate transition frequencies.
inline constexpr double kFrequencyGroupingTolerance = 1e-9;

Liouvillian build_liouvillian(const ProbeSetup& setup);

/// Builds the generator from a caller-supplied eigenbasis of H_S. Used to
/// verify that observables do not depend on eigenvector phases.
Liouvillian build_liouvillian(const ProbeSetup& setup, const Eigensystem& basis);

Matrix4c hamiltonian(const ProbeSetup& setup);

enum class Observable { system_x, probe_x };

/// sx on the system qubit or on the probe qubit.
Matrix4c observable_matrix(Observable which);

/// Uniform grid of `points` samples on [start, stop].
struct TimeGrid {
  double start = 0.0;
  double stop = 100.0;
  std::size_t points = 101;

  double step() const;
  double at(std::size_t i) const;
  std::vector<double> times() const;

  /// 101 samples on [0, 100]: the machine-learning feature grid.
  static TimeGrid canonical();
  /// 1001 samples on [0, 100]: the synchronization-analysis grid.
  static TimeGrid dense();
};

struct Trajectory {
  Observable observable = Observable::probe_x;
  std::vector<double> times;
  std::vector<double> values;
};

struct TrajectoryPair {
  Trajectory system;
  Trajectory probe;
};

/// (|up> + |down>)/sqrt(2) on both qubits.
Matrix4c plus_plus_state();

/// Projector on the lowest eigenstate of H_S.
Matrix4c ground_state_projector(const Eigensystem& eig);

/// Throws ValidationError unless rho is Hermitian, unit-trace and positive
/// semidefinite within `tolerance`.
void validate_density_matrix(const Matrix4c& rho, double tolerance = 1e-10);

/// Density matrices rho(t_i) for every grid time, by repeated application of
/// exp(L dt). Throws StabilityError if trace or positivity drift beyond 1e-8.
std::vector<Matrix4c> evolve(const Liouvillian& L, const Matrix4c& rho0, const TimeGrid& grid);

TrajectoryPair propagate(const Liouvillian& L, const Matrix4c& rho0,
                         const TimeGrid& grid = TimeGrid::canonical());

/// One eigenmode of the generator and its weight in each observable:
/// <sx(t)> = sum_k amplitude_k exp(eigenvalue_k t).
struct SpectralMode {
  cplx eigenvalue;
  cplx amplitude_q;
  cplx amplitude_p;
};

/// All 16 modes sorted by decay rate (-Re) ascending, ties by Im ascending.
/// Throws DefectiveGeneratorError when the generator is not diagonalizable
/// to working precision.
std::vector<SpectralMode> spectral_decomposition(const Liouvillian& L, const Matrix4c& rho0);

/// Slowest mode oscillating at |E_m|. `rate` is gamma~_m in exp(-gamma~_m t/2).
struct ModeParams {
  double frequency = 0.0;
  double rate = 0.0;
  cplx eigenvalue;
  cplx amplitude_q;
  cplx amplitude_p;
};

struct AsymptoticParams {
  std::array<ModeParams, 2> modes;  // [0] at |E1|, [1] at |E2|
};

AsymptoticParams asymptotic_params(const ProbeSetup& setup, const Matrix4c& rho0);
AsymptoticParams asymptotic_params(const Liouvillian& L, const Matrix4c& rho0);

/// Two-mode closed-form trajectories: 2 Re[a exp(eigenvalue t)] per mode.
TrajectoryPair asymptotic_trajectory(const AsymptoticParams& params, const TimeGrid& grid);

/// Ohmicity s* at which gamma1 = gamma2 for the given probe frequency.
double sync_boundary_s(double omega_p, double lambda);

/// Inverse of sync_boundary_s: the probe frequency in [lo, hi] where
/// s*(w_p) = s. Throws DomainError if not bracketed.
double sync_boundary_omega_p(double s, double lambda, double lo = 0.5, double hi = 2.0);

struct DominantMode {
  int mode = 0;  // 1 -> |E1|, 2 -> |E2|
  double omega_sync = 0.0;
  double phase_difference = 0.0;  // arg(a_q) - arg(a_p) wrapped to (-pi, pi]
  /// True when the surviving frequency is E_m with the larger rate gamma~_m,
  /// i.e. w_sync ~ E1 exactly when gamma1 >> gamma2.
  bool matches_larger_rate_reading = false;

  bool in_phase() const;
};

/// Throws NoDominantModeError when the two slow rates agree within 1e-6 relative.
DominantMode dominant_mode(const ProbeSetup& setup, const Matrix4c& rho0);

}  // namespace qsync
