#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "recondet/layers.hpp"
#include "recondet/tensor.hpp"

namespace recondet {

// Binary model container: a fixed magic, a format version, a JSON header
// describing kind/metadata/tensor shapes, then the raw float32 blobs in
// header order. Reload is bit exact.
class Checkpoint {
 public:
  std::string kind;
  nlohmann::json meta;

  void add(const std::string& name, const nn::Tensor& t);
  bool has(const std::string& name) const;
  const nn::Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, nn::Tensor>>& tensors() const { return tensors_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, nn::Tensor>> tensors_;
};

// Stores every parameter of a model under its own name.
void put_params(Checkpoint& ck, const std::vector<nn::Param*>& params);

// Restores parameters by name with shape checks; a missing or misshapen
// entry is an error, never a silent skip.
void load_params(const Checkpoint& ck, const std::vector<nn::Param*>& params);

// Content id of a checkpoint file, used for cache invalidation.
std::string checkpoint_id(const std::string& path);

// Writes "<path>.digest" holding checkpoint_id(path).
void write_digest_sidecar(const std::string& path);

}  // namespace recondet
