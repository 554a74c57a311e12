#pragma once

// Builders for the example systems: the harmonic pair, the planar trap, the
// slow symplectic system, Galerkin-truncated 3D Euler in Fourier modes, and
// the oscillator heat-bath chain.

#include <array>
#include <string>
#include <vector>

#include "model.hpp"
#include "sde.hpp"

namespace sk {

/// H = (p1^2+p2^2)/2 + (q1^2+q2^2)/2, E = span{p1}. Deficient bracket rank.
ModelSpec build_harmonic_pair();

/// x' = u - x, y' = gsat(y + gsat(x)) - y bump(y). No conserved quantity; the
/// declared barrier bands certify that y cannot cross (1,2) downward or
/// (-2,-1) upward.
ModelSpec build_trap();

/// H = sqrt(1 + x^2 + y^2), symplectic field, E = span{x}. |dH/dx| <= 1, so
/// steering in y is speed-limited.
ModelSpec build_slow();

// --- Galerkin Euler -----------------------------------------------------------------

struct EulerMode {
  std::array<int, 3> k;
  std::array<std::array<double, 3>, 2> basis;  // orthonormal basis of k-perp
};

struct EulerTruncation {
  int nstar = 1;
  std::vector<EulerMode> reps;  // one representative per +/- pair
  static EulerTruncation build(int nstar);
};

/// Real-coordinate quadratic field over 4 coordinates per representative mode
/// (complex components in the k-perp basis), with H = sum |u_k|^2. Control
/// defaults to all four coordinates of the representatives in `control_reps`.
ModelSpec build_euler_galerkin(int nstar, std::vector<int> control_reps = {0});

// --- heat-bath chain -----------------------------------------------------------------

struct ChainSpec {
  int oscillators = 1;                  // N
  std::string hs = "(p1^2 + q1^2)/2";   // H_S over q1..qN, p1..pN
  std::vector<std::string> couplings = {"q1", "q1"};  // F_i over (q, p)
  std::vector<double> gamma = {1.0, 1.0};
  std::vector<double> lambda = {1.0, 1.0};
  std::vector<double> temperature = {1.0, 1.0};
};

struct ChainBuild {
  ModelSpec model;        // control form: r_i' = u_i, conserved H
  DiffusionSystem sde;    // the literal heat-bath SDE with temperatures
};

ChainBuild build_chain(const ChainSpec& spec);

/// Names accepted by the CLI `model` subcommand.
std::vector<std::string> zoo_names();

}  // namespace sk
