#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace recgoat {

enum class EntityKind { ItemText, ItemVisual, UserText };

// Dense row-major float matrix of per-entity modality features.
// Storage is float32 so that RGF1 files round-trip bit-exactly.
struct FeatureMatrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data;  // rows * cols, row-major
    EntityKind entity_kind = EntityKind::ItemText;

    float at(std::uint32_t r, std::uint32_t c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    float& at(std::uint32_t r, std::uint32_t c) { return data[static_cast<std::size_t>(r) * cols + c]; }

    Eigen::MatrixXd to_dense() const;
    static FeatureMatrix from_dense(const Eigen::MatrixXd& m, EntityKind kind = EntityKind::ItemText);
};

// RGF1 binary format:
//   bytes 0-3   ASCII "RGF1"
//   bytes 4-7   uint32 little-endian row count
//   bytes 8-11  uint32 little-endian column count
//   then rows*cols IEEE-754 float32 little-endian values, row-major
FeatureMatrix load_feature_matrix(const std::string& path);
void save_feature_matrix(const FeatureMatrix& m, const std::string& path);

}  // namespace recgoat
