#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "brainenc/ndiff/ops.hpp"

namespace brainenc::obj {

/// Weights of the enabled training losses.
struct LossSpec {
  double smooth_l1 = 1.0;
  double pc = 1.0;
  double mnnpc = 1.0;
  /// Unset means "use the stage default" (on for fine-tuning, off for pretraining).
  std::optional<bool> use_noise_ceiling;
  double smooth_l1_beta = 1.0;

  void validate() const;
};

/// Mean over elements of the Huber-style smooth L1 penalty on pred - gt.
template <typename T>
nd::Var<T> smooth_l1(nd::Var<T> pred, nd::Var<T> gt, T beta = T{1});

/// Per-row Pearson correlation (cosine similarity of centred rows, epsilon
/// 1e-6 on the norm product) averaged over rows, mapped to 1 - (r + 1) / 2.
template <typename T>
nd::Var<T> pc_loss(nd::Var<T> pred, nd::Var<T> gt);

/// Per-column Pearson correlation across the batch (epsilon 1e-8 added to the
/// denominator) mapped to t = 1 - (r + 1) / 2. With a noise ceiling each t is
/// replaced by t^2 / nc, zero nc entries counting as 1. Mean over columns.
/// An empty `nc` span means no noise ceiling.
template <typename T>
nd::Var<T> mnnpc_loss(nd::Var<T> pred, nd::Var<T> gt, std::span<const T> nc = {});

/// Weighted sum of the enabled losses for one prediction block. `nc` is used
/// for the MNNPC term only when non-empty.
template <typename T>
nd::Var<T> block_loss(nd::Var<T> pred, nd::Var<T> gt, const LossSpec& spec, std::span<const T> nc = {});

/// Masked, hemisphere-averaged composite: for each hemisphere drop columns
/// whose mask entry is 0, evaluate block_loss, then average the two.
/// Empty masks keep every column; empty nc disables noise-ceiling weighting.
template <typename T>
nd::Var<T> composite_loss(nd::Var<T> pred_l, nd::Var<T> pred_r, nd::Var<T> gt_l, nd::Var<T> gt_r,
                          const LossSpec& spec, std::span<const T> nc_l = {}, std::span<const T> nc_r = {},
                          std::span<const std::uint8_t> mask_l = {}, std::span<const std::uint8_t> mask_r = {});

}  // namespace brainenc::obj
