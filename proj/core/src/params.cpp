#include "ivt/params.hpp"

namespace ivt {

void ParamLayout::add(std::string name, int rows, int cols, ParamGroup group) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("parameter shape must be positive");
  if (by_name_.count(name) > 0) throw std::invalid_argument("duplicate parameter name: " + name);
  ParamInfo info;
  info.name = std::move(name);
  info.rows = rows;
  info.cols = cols;
  info.group = group;
  info.offset = total_;
  by_name_.emplace(info.name, static_cast<int>(entries_.size()));
  total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  entries_.push_back(std::move(info));
}

int ParamLayout::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

ParamStore::ParamStore(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), data_(layout_->total_size(), 0.0) {}

MatMap ParamStore::mat(int index) {
  const ParamInfo& info = layout_->info(index);
  return MatMap(data_.data() + info.offset, info.rows, info.cols);
}

ConstMatMap ParamStore::mat(int index) const {
  const ParamInfo& info = layout_->info(index);
  return ConstMatMap(data_.data() + info.offset, info.rows, info.cols);
}

MatMap ParamStore::mat(const std::string& name) {
  const int idx = layout_->index_of(name);
  if (idx < 0) throw std::invalid_argument("unknown parameter: " + name);
  return mat(idx);
}

ConstMatMap ParamStore::mat(const std::string& name) const {
  const int idx = layout_->index_of(name);
  if (idx < 0) throw std::invalid_argument("unknown parameter: " + name);
  return mat(idx);
}

void ParamStore::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void ParamStore::quantize_to_f32() {
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace ivt
