#pragma once

// Synthetic ambient-vibration records drawn from the FFT-domain model,
// multi-setup test plans and the eight-story shear-frame preset.

#include <cstdint>
#include <string>
#include <vector>

#include "msoma/model.hpp"
#include "msoma/spectra.hpp"
#include "msoma/types.hpp"

namespace msoma {

struct TrueModel {
  Vec f;
  Vec zeta;
  Mat Phi;  // n x m, unit columns
  CMat S;
  double Se = 1.0;
  int q = 0;
  double fs = 100.0;
  std::uint64_t seed = 0;
  std::vector<std::string> dof_labels;

  int modes() const { return static_cast<int>(f.size()); }
  int n_dofs() const { return static_cast<int>(Phi.rows()); }
  void validate() const;
};

struct SetupPlan {
  SelectionMap map;  // over the plan's DoF set
  double start = 0.0;
  double duration = 0.0;
};

/// Plan DoF d is model DoF dofs[d]; setups read disjoint or overlapping time
/// segments of one record.
struct TestPlan {
  std::vector<int> dofs;
  std::vector<SetupPlan> setups;
  double total_duration = 0.0;

  int n_dofs() const { return static_cast<int>(dofs.size()); }
  void validate(const TrueModel& model) const;
};

/// Three modes (TX, TY, R) of an eight-story frame with 34 biaxial points.
TrueModel shear_frame_preset(std::uint64_t seed = 0);

/// Points 1 and 5 as references; the other 32 points roved floor by floor
/// from the top, split evenly over n_setups consecutive segments.
TestPlan shear_frame_plan(int n_setups, double setup_duration_s);

/// Points 1 and 5 as references plus rovers_per_setup roving points per
/// setup; only the DoFs actually measured enter the plan.
TestPlan roving_plan(int n_setups, int rovers_per_setup, double setup_duration_s);

/// True shapes restricted to the plan DoFs, columns renormalized.
Mat plan_shapes(const TrueModel& model, const TestPlan& plan);

/// Full record of every model DoF.
TimeHistory generate(const TrueModel& model, double duration);

/// Per-setup records: rows tau over each setup's segment.
std::vector<TimeHistory> slice(const TimeHistory& history, const TestPlan& plan);

/// Same output as slice(generate(...)) bit for bit, one channel at a time.
std::vector<TimeHistory> generate_setups(const TrueModel& model, const TestPlan& plan);

/// Standard complex normal CN(0, 1) at (seed, stream, index); counter based.
cplx counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace msoma
