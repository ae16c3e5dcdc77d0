#pragma once

#include <doctest.h>

#include <functional>
#include <vector>

#include "afa/encoder.hpp"
#include "afa/ops.hpp"

namespace testutil {

using afa::GradTape;
using afa::Mat;
using afa::Var;

inline Mat<double> randm(afa::Rng& rng, int r, int c, double scale = 1.0) {
  return afa::uniform_matrix<double>(rng, r, c, -scale, scale);
}

using BuildFn =
    std::function<Var<double>(GradTape<double>&, const std::vector<Var<double>>&)>;

inline double eval_scalar(const std::vector<Mat<double>>& inputs, const BuildFn& build) {
  GradTape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  return build(tape, leaves).value()(0, 0);
}

// Central finite differences (step 1e-4, double precision) against the tape
// gradients; relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. `build` must construct the same graph on every call.
inline void check_gradients(const std::vector<Mat<double>>& inputs, const BuildFn& build,
                            double tol = 1e-4, double step = 1e-4) {
  GradTape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  Var<double> loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Mat<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& leaf : leaves) analytic.push_back(tape.grad_of(leaf));

  std::vector<Mat<double>> probe = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (afa::Index r = 0; r < inputs[i].rows(); ++r) {
      for (afa::Index c = 0; c < inputs[i].cols(); ++c) {
        const double saved = probe[i](r, c);
        probe[i](r, c) = saved + step;
        const double fp = eval_scalar(probe, build);
        probe[i](r, c) = saved - step;
        const double fm = eval_scalar(probe, build);
        probe[i](r, c) = saved;
        const double numeric = (fp - fm) / (2 * step);
        const double a = analytic[i](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        INFO("input ", i, " element (", r, ",", c, "): analytic ", a, " numeric ", numeric);
        CHECK(std::abs(a - numeric) / denom <= tol);
      }
    }
  }
}

inline double max_abs_diff(const Mat<double>& a, const Mat<double>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const Mat<float>& a, const Mat<float>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

template <class S>
Mat<S> logits_of(const afa::Checkpoint<S>& ckpt, const std::vector<int>& ids) {
  GradTape<S> tape;
  afa::BoundModel<S> model(tape, ckpt);
  return afa::mlm_logits(model, afa::encoder_forward(model, ids, nullptr, false)).value();
}

inline std::vector<int> random_ids(afa::Rng& rng, int n, int vocab) {
  std::vector<int> ids(static_cast<size_t>(n));
  for (auto& id : ids) id = rng.uniform_int(vocab);
  return ids;
}

}  // namespace testutil
