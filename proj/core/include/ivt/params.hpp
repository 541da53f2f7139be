#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ivt/common.hpp"

namespace ivt {

// Optimizer grouping. Layer-norm parameters and embedding tables are excluded
// from weight decay; projections (linear weights and biases) receive it.
enum class ParamGroup { kProjection, kEmbedding, kLayerNorm };

struct ParamInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  ParamGroup group = ParamGroup::kProjection;
  std::size_t offset = 0;  // element offset into the flat buffer
};

class ParamLayout {
 public:
  void add(std::string name, int rows, int cols, ParamGroup group);
  const std::vector<ParamInfo>& entries() const { return entries_; }
  const ParamInfo& info(int index) const { return entries_.at(static_cast<std::size_t>(index)); }
  int index_of(const std::string& name) const;  // -1 when absent
  std::size_t total_size() const { return total_; }

 private:
  std::vector<ParamInfo> entries_;
  std::unordered_map<std::string, int> by_name_;
  std::size_t total_ = 0;
};

// A flat double buffer with named row-major matrix views. Gradients and
// optimizer state reuse the same layout as the parameters they mirror.
class ParamStore {
 public:
  explicit ParamStore(std::shared_ptr<const ParamLayout> layout);

  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }

  MatMap mat(int index);
  ConstMatMap mat(int index) const;
  MatMap mat(const std::string& name);
  ConstMatMap mat(const std::string& name) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::size_t size() const { return data_.size(); }

  void set_zero();
  // Rounds every value through 32-bit float precision (the on-disk width).
  void quantize_to_f32();

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> data_;
};

}  // namespace ivt
