#pragma once

#include "kspace.hpp"

#include <optional>

namespace gstm {

/// Analytic reference series and the motion phases that produced it.
template <typename T>
struct GroundTruth
{
  ImageSeries<T> images;
  std::vector<std::array<double, 2>> phases; // (cardiac, respiratory) per frame
};

/// Everything a reconstruction needs: per-frame measurements plus shared coil maps.
template <typename T>
struct Dataset
{
  Index size = 0; // image grid N
  CoilMaps<T> coils;
  std::vector<KSpaceFrame<T>> frames;
  std::optional<GroundTruth<T>> truth;

  Index n_frames() const { return Index(frames.size()); }

  Index total_samples() const
  {
    Index n = 0;
    for (auto const &f : frames) {
      n += f.n_samples();
    }
    return n;
  }

  void validate() const
  {
    if (frames.empty()) {
      throw ShapeError("dataset has no frames");
    }
    if (coils.size != size) {
      throw ShapeError("coil maps do not match the dataset grid");
    }
    for (auto const &f : frames) {
      if (f.n_coils != coils.n_coils) {
        throw ShapeError("frame coil count does not match coil maps");
      }
      f.validate();
    }
    if (truth) {
      if (truth->images.size() != frames.size() || truth->phases.size() != frames.size()) {
        throw ShapeError("ground truth length does not match frame count");
      }
    }
  }
};

} // namespace gstm
