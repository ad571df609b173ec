#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iassd/geometry.hpp"

namespace iassd {

/// Row-major N x D matrix of per-point features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  bool empty() const { return rows == 0 || cols == 0; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<double> intensity;  // empty or one value per point
  FeatureMatrix features;         // empty or one row per point

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
  bool has_features() const { return !features.empty(); }

  void validate() const {
    if (has_intensity() && intensity.size() != coords.size())
      throw std::invalid_argument("PointCloud: intensity count differs from point count");
    if (has_features() && features.rows != coords.size())
      throw std::invalid_argument("PointCloud: feature row count differs from point count");
    for (std::size_t i = 0; i < coords.size(); ++i)
      if (!coords[i].finite())
        throw std::invalid_argument("PointCloud: non-finite coordinate at point " + std::to_string(i));
  }

  /// Sub-cloud in the order given by `indices`.
  PointCloud select(std::span<const std::size_t> indices) const {
    PointCloud out;
    out.coords.reserve(indices.size());
    for (std::size_t i : indices) out.coords.push_back(coords.at(i));
    if (has_intensity())
      for (std::size_t i : indices) out.intensity.push_back(intensity[i]);
    if (has_features()) {
      out.features = FeatureMatrix(indices.size(), features.cols);
      for (std::size_t r = 0; r < indices.size(); ++r) {
        auto src = features.row(indices[r]);
        std::copy(src.begin(), src.end(), out.features.row(r).begin());
      }
    }
    return out;
  }
};

/// A point cloud with its ground-truth boxes. Instance ids are unique
/// within a scene.
struct LabeledScene {
  std::string frame_id;
  PointCloud cloud;
  std::vector<Box7> boxes;
};

}  // namespace iassd
