#include "recondet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "recondet/common.hpp"

namespace recondet {

namespace {
constexpr char kMagic[4] = {'R', 'D', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void Checkpoint::add(const std::string& name, const nn::Tensor& t) {
  if (has(name)) throw std::invalid_argument("duplicate checkpoint tensor: " + name);
  tensors_.emplace_back(name, t);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const nn::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw std::out_of_range("checkpoint tensor not found: " + name);
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["kind"] = kind;
  header["meta"] = meta;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [name, t] : tensors_) {
    shapes.push_back({{"name", name}, {"n", t.n}, {"c", t.c}, {"h", t.h}, {"w", t.w}});
  }
  header["tensors"] = shapes;
  const std::string hbytes = header.dump();

  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    std::uint64_t hlen = hbytes.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hbytes.data(), static_cast<std::streamsize>(hbytes.size()));
    for (const auto& [name, t] : tensors_) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("checkpoint not found: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DependencyError("not a checkpoint file: " + path);
  std::uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (!in || ver != kVersion)
    throw DependencyError("unsupported checkpoint version in " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1ull << 30))
    throw DependencyError("corrupt checkpoint header in " + path);
  std::string hbytes(hlen, '\0');
  in.read(hbytes.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DependencyError("truncated checkpoint header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hbytes);
  } catch (const nlohmann::json::exception&) {
    throw DependencyError("corrupt checkpoint header in " + path);
  }

  Checkpoint ck;
  ck.kind = header.value("kind", "");
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& s : header.at("tensors")) {
    nn::Tensor t(s.at("n").get<int>(), s.at("c").get<int>(), s.at("h").get<int>(),
                 s.at("w").get<int>());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw DependencyError("truncated checkpoint tensor data in " + path);
    ck.tensors_.emplace_back(s.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void put_params(Checkpoint& ck, const std::vector<nn::Param*>& params) {
  for (const auto* p : params) ck.add(p->name, p->value);
}

void load_params(const Checkpoint& ck, const std::vector<nn::Param*>& params) {
  for (auto* p : params) {
    const nn::Tensor& stored = ck.get(p->name);
    if (!stored.same_shape(p->value))
      throw DependencyError("checkpoint tensor shape mismatch for " + p->name);
    p->value = stored;
    p->grad.zero();
  }
}

std::string checkpoint_id(const std::string& path) {
  return to_hex(file_digest(path));
}

void write_digest_sidecar(const std::string& path) {
  std::ofstream out(path + ".digest", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write digest sidecar for " + path);
  out << checkpoint_id(path) << "\n";
}

}  // namespace recondet
