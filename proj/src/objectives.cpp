#include "brainenc/objectives.hpp"

#include <cmath>
#include <vector>

namespace brainenc::obj {

using nd::Tensor;
using nd::Var;

void LossSpec::validate() const {
  for (double w : {smooth_l1, pc, mnnpc})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  if (smooth_l1 <= 0.0 && pc <= 0.0 && mnnpc <= 0.0) throw ConfigError("at least one loss weight must be positive");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be positive");
}

namespace {

template <typename T>
void require_matrix_pair(const char* op, Var<T> pred, Var<T> gt) {
  if (pred.shape().size() != 2 || pred.shape() != gt.shape())
    throw ShapeError(std::string(op) + ": prediction " + nd::shape_str(pred.shape()) + " and target " +
                     nd::shape_str(gt.shape()) + " must be equal rank-2 shapes");
}

}  // namespace

template <typename T>
Var<T> smooth_l1(Var<T> pred, Var<T> gt, T beta) {
  require_matrix_pair("smooth_l1", pred, gt);
  if (!(beta > T{0})) throw ArgumentError("smooth_l1: beta must be positive");
  const auto& pv = pred.value();
  const auto& gv = gt.value();
  const std::size_t n = pv.size();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pv[i] - gv[i];
    const T a = std::abs(d);
    acc += a < beta ? T{0.5} * d * d / beta : a - T{0.5} * beta;
  }
  return pred.tape->record(Tensor<T>::scalar(acc / static_cast<T>(n)), {pred, gt},
                           [pred, gt, beta, n](nd::Tape<T>& tape, std::size_t self) {
                             const T g = tape.grad(self)[0] / static_cast<T>(n);
                             const auto& pv = tape.value(pred.id);
                             const auto& gv = tape.value(gt.id);
                             auto slope = [&](std::size_t i) {
                               const T d = pv[i] - gv[i];
                               if (std::abs(d) < beta) return d / beta;
                               return d > T{0} ? T{1} : T{-1};
                             };
                             if (tape.needs_grad(pred.id)) {
                               auto& gp = tape.grad_mut(pred.id);
                               for (std::size_t i = 0; i < n; ++i) gp[i] += g * slope(i);
                             }
                             if (tape.needs_grad(gt.id)) {
                               auto& gg = tape.grad_mut(gt.id);
                               for (std::size_t i = 0; i < n; ++i) gg[i] -= g * slope(i);
                             }
                           });
}

template <typename T>
Var<T> pc_loss(Var<T> pred, Var<T> gt) {
  require_matrix_pair("pc_loss", pred, gt);
  if (pred.dim(1) < 2) throw ArgumentError("pc_loss: correlation across fewer than 2 vertices is undefined");
  auto pc = nd::center_axis(pred, 1);
  auto gc = nd::center_axis(gt, 1);
  auto dot = nd::sum_axis(nd::mul(pc, gc), 1);
  auto norms = nd::mul(nd::sqrt(nd::sum_axis(nd::square(pc), 1)), nd::sqrt(nd::sum_axis(nd::square(gc), 1)));
  auto r = nd::div(dot, nd::clamp_min(norms, T(1e-6)));
  auto mean_r = nd::mean_all(r);
  // 1 - (r + 1) / 2
  return nd::add_scalar(nd::mul_scalar(mean_r, T{-0.5}), T{0.5});
}

template <typename T>
Var<T> mnnpc_loss(Var<T> pred, Var<T> gt, std::span<const T> nc) {
  require_matrix_pair("mnnpc_loss", pred, gt);
  const std::size_t cols = pred.dim(1);
  if (pred.dim(0) < 2) throw ArgumentError("mnnpc_loss: correlation across a batch of fewer than 2 samples is undefined");
  if (!nc.empty() && nc.size() != cols)
    throw ShapeError("mnnpc_loss: noise ceiling has " + std::to_string(nc.size()) + " entries for " + std::to_string(cols) + " vertices");
  for (T v : nc)
    if (!(v >= T{0})) throw ValidationError("mnnpc_loss: noise ceiling entries must be non-negative");

  auto pc = nd::center_axis(pred, 0);
  auto gc = nd::center_axis(gt, 0);
  auto ts = nd::sum_axis(nd::mul(gc, pc), 0);
  auto ms = nd::sqrt(nd::mul(nd::sum_axis(nd::square(gc), 0), nd::sum_axis(nd::square(pc), 0)));
  auto rv = nd::div(ts, nd::add_scalar(ms, T(1e-8)));
  auto t = nd::add_scalar(nd::mul_scalar(rv, T{-0.5}), T{0.5});
  if (!nc.empty()) {
    Tensor<T> guarded({1, cols});
    for (std::size_t v = 0; v < cols; ++v) guarded[v] = nc[v] == T{0} ? T{1} : nc[v];
    t = nd::div(nd::square(t), pred.tape->constant(std::move(guarded)));
  }
  return nd::mean_all(t);
}

template <typename T>
Var<T> block_loss(Var<T> pred, Var<T> gt, const LossSpec& spec, std::span<const T> nc) {
  spec.validate();
  std::optional<Var<T>> total;
  auto push = [&](double w, Var<T> term) {
    auto weighted = nd::mul_scalar(term, static_cast<T>(w));
    total = total ? nd::add(*total, weighted) : weighted;
  };
  if (spec.smooth_l1 > 0.0) push(spec.smooth_l1, smooth_l1(pred, gt, static_cast<T>(spec.smooth_l1_beta)));
  if (spec.pc > 0.0) push(spec.pc, pc_loss(pred, gt));
  if (spec.mnnpc > 0.0) push(spec.mnnpc, mnnpc_loss(pred, gt, nc));
  return *total;
}

template <typename T>
Var<T> composite_loss(Var<T> pred_l, Var<T> pred_r, Var<T> gt_l, Var<T> gt_r, const LossSpec& spec,
                      std::span<const T> nc_l, std::span<const T> nc_r, std::span<const std::uint8_t> mask_l,
                      std::span<const std::uint8_t> mask_r) {
  auto hemisphere = [&](Var<T> pred, Var<T> gt, std::span<const T> nc, std::span<const std::uint8_t> mask,
                        const char* name) {
    require_matrix_pair("composite_loss", pred, gt);
    if (mask.empty()) return block_loss(pred, gt, spec, nc);
    const std::size_t cols = pred.dim(1);
    if (mask.size() != cols) throw ShapeError(std::string("composite_loss: ") + name + " mask length does not match predictions");
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[c]) keep.push_back(c);
    if (keep.empty()) throw ArgumentError(std::string("composite_loss: every ") + name + " vertex is masked");
    std::vector<T> nc_kept;
    if (!nc.empty()) {
      if (nc.size() != cols) throw ShapeError(std::string("composite_loss: ") + name + " noise ceiling length does not match");
      for (auto c : keep) nc_kept.push_back(nc[c]);
    }
    if (keep.size() == cols) return block_loss(pred, gt, spec, nc);
    return block_loss(nd::gather_cols(pred, keep), nd::gather_cols(gt, keep), spec, std::span<const T>(nc_kept));
  };
  auto lh = hemisphere(pred_l, gt_l, nc_l, mask_l, "lh");
  auto rh = hemisphere(pred_r, gt_r, nc_r, mask_r, "rh");
  return nd::mul_scalar(nd::add(lh, rh), T{0.5});
}

#define BRAINENC_INSTANTIATE_OBJ(T)                                                                          \
  template Var<T> smooth_l1(Var<T>, Var<T>, T);                                                              \
  template Var<T> pc_loss(Var<T>, Var<T>);                                                                   \
  template Var<T> mnnpc_loss(Var<T>, Var<T>, std::span<const T>);                                            \
  template Var<T> block_loss(Var<T>, Var<T>, const LossSpec&, std::span<const T>);                           \
  template Var<T> composite_loss(Var<T>, Var<T>, Var<T>, Var<T>, const LossSpec&, std::span<const T>,        \
                                 std::span<const T>, std::span<const std::uint8_t>, std::span<const std::uint8_t>);

BRAINENC_INSTANTIATE_OBJ(float)
BRAINENC_INSTANTIATE_OBJ(double)

#undef BRAINENC_INSTANTIATE_OBJ

}  // namespace brainenc::obj
