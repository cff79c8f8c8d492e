#pragma once

// Central finite differences and the two reference routes from a Hessian to
// the constrained posterior covariance.

#include <functional>
#include <vector>

#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/types.hpp"

namespace msoma {

struct FdSettings {
  double rel_step = 1e-5;
  double abs_step_floor = 1e-8;
  // Hessians take larger steps (second differences lose twice the digits).
  // nllf_fd_hessian adds one Richardson extrapolation (4 H(h/2) - H(h)) / 3,
  // which removes the h^2 truncation term.
  double hessian_rel_step = 3e-4;
  bool richardson = true;

  void validate() const;
  double step(double value) const;
};

using ScalarFunction = std::function<double(const Vec&)>;
using VectorFunction = std::function<Vec(const Vec&)>;

Vec fd_gradient(const ScalarFunction& fun, const Vec& theta0, const FdSettings& s = {});
Mat fd_hessian(const ScalarFunction& fun, const Vec& theta0, const FdSettings& s = {});
/// Central-difference Jacobian of a vector function (rows = outputs).
Mat fd_jacobian(const VectorFunction& fun, const Vec& theta0, const FdSettings& s = {});

// Same with an explicit step per coordinate.
Vec fd_gradient(const ScalarFunction& fun, const Vec& theta0, const Vec& steps);
Mat fd_hessian(const ScalarFunction& fun, const Vec& theta0, const Vec& steps);
Mat fd_jacobian(const VectorFunction& fun, const Vec& theta0, const Vec& steps);

/// Steps for the flat encoding scaled by each parameter's typical size rather
/// than its value, so that entries near zero (off-diagonal S, small shape
/// components) are not probed at roundoff level: rel_step times f_i, zeta_i,
/// sqrt(S_ii S_jj), Se, or the column RMS of Phi.
Vec fd_steps(const ThetaVector& theta, const FdSettings& s = {});

/// NLLF over the flat encoding.
ScalarFunction nllf_function(const std::vector<SetupBand>& bands, int modes, int n_dofs);

/// Finite-difference Hessian of the NLLF (steps from fd_steps) exploiting that each setup's term
/// only depends on its own scalars and the shape rows it measures. Every
/// probe still evaluates through the flat encoding.
Mat nllf_fd_hessian(const ThetaVector& theta, const std::vector<SetupBand>& bands,
                    const FdSettings& s = {});

enum class ConstraintRoute { Pseudoinverse, Nullspace };

/// U (U^T H U)^-1 U^T or U (U^T H U)^+ U^T with U an orthonormal null-space
/// basis of Ggrad.
Mat pcm_fdm(const Mat& H, const Mat& Ggrad, ConstraintRoute route);

}  // namespace msoma
