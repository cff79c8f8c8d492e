#pragma once

// Most probable value of the multi-setup parameters by expectation
// maximization, with monotone-safeguarded parabolic acceleration and the
// final unit-norm renormalization of the mode shapes.

#include <vector>

#include "msoma/likelihood.hpp"
#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/types.hpp"

namespace msoma {

enum class Acceleration { Off, Parabolic };

struct EmSettings {
  int max_iter = 2000;
  double tol_rel_nllf = 1e-9;
  double tol_param = 1e-6;
  Acceleration acceleration = Acceleration::Parabolic;
  bool deterministic = true;  // reductions always run in fixed order; kept for the manifest
  int newton_max_iter = 20;
  double zeta_min = 1e-4;
  double zeta_max = 0.3;
  double freq_margin = 0.2;  // f stays within [(1 - margin) f_l, (1 + margin) f_u]
  // Once an EM step lowers the nllf by less than polish_switch (relative),
  // switch to Newton steps on the assembled Hessian. EM crawls near optima
  // with closely spaced modes or a nearly singular S.
  bool newton_polish = true;
  double polish_switch = 1e-7;

  void validate() const;
};

struct IterationRecord {
  int iter = 0;
  double nllf = 0.0;
  double max_param_delta = 0.0;
  bool accelerated = false;
  bool newton = false;
};

struct MpvResult {
  ThetaVector theta_hat;
  std::vector<double> nllf_trace;  // nllf after each iteration (entry 0: starting point)
  std::vector<IterationRecord> trace;
  bool converged = false;
  double grad_norm = 0.0;  // infinity norm of the analytic NLLF gradient at theta_hat
  double nllf = 0.0;
  int iterations = 0;
};

using MomentTable = std::vector<std::vector<LatentMoments>>;  // [setup][line]

/// Starting point from the band data: f = f0, zeta = 0.01, shapes from the
/// leading singular vectors of each setup stitched through shared DoFs.
ThetaVector initialize(const std::vector<SetupBand>& bands, const Vec& f0);

MomentTable e_step(const ThetaVector& theta, const std::vector<SetupBand>& bands);

/// One conditional-maximization pass over Phi, Se, S and (f, zeta). Each
/// sub-update does not increase the Q-function of the supplied moments.
ThetaVector m_step(const MomentTable& moments, const std::vector<SetupBand>& bands,
                   const ThetaVector& theta_prev, const EmSettings& settings = {});

/// Phi <- Phi D^-1, S <- D S D with D = diag of the column norms.
ThetaVector renormalize(const ThetaVector& theta);

MpvResult run_em(const std::vector<SetupBand>& bands, const Vec& f0, const EmSettings& settings = {});
MpvResult run_em(const std::vector<SetupBand>& bands, const ThetaVector& start,
                 const EmSettings& settings = {});

/// Relabel modes in ascending order of their mean frequency over setups.
/// The nllf is unchanged.
ThetaVector sort_modes(const ThetaVector& theta);

/// Per-block relative change used by the convergence test.
double max_param_change(const ThetaVector& a, const ThetaVector& b);

}  // namespace msoma
