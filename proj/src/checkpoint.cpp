// Checkpoint layout (all integers little-endian):
//   "RFERCKPT"                      8 bytes
//   u32 version (= 1)
//   u64 metadata length, metadata   UTF-8 JSON
//   u32 parameter count
//   per parameter:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)]        IEEE-754 binary64
#include <bit>
#include <cstring>
#include <fstream>

#include "rfer/errors.hpp"
#include "rfer/model.hpp"

namespace rfer {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'R', 'F', 'E', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ContractError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DualHeadModel& model,
                     const CheckpointMeta& meta) {
  nlohmann::json j = {{"epoch", meta.epoch},
                      {"seed", meta.seed},
                      {"config_hash", meta.config_hash},
                      {"model", model.config().to_json()},
                      {"backbone", model.backbone().describe()},
                      {"extra", meta.extra}};
  const std::string text = j.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw DataError("cannot write checkpoint " + path.string());
}

namespace {

struct StoredParameter {
  std::string name;
  std::vector<std::size_t> shape;
};

// Opens a checkpoint and reads everything before the parameter records.
nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ContractError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = get<std::uint64_t>(in, path);
  if (meta_len > (1u << 26)) throw ContractError("corrupt checkpoint metadata length");
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw ContractError("truncated checkpoint " + path.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
}

StoredParameter read_parameter_header(std::ifstream& in, const std::filesystem::path& path) {
  StoredParameter p;
  const auto name_len = get<std::uint32_t>(in, path);
  if (name_len > 4096) throw ContractError("corrupt parameter name length in " + path.string());
  p.name.resize(name_len);
  in.read(p.name.data(), name_len);
  const auto rank = get<std::uint32_t>(in, path);
  if (rank > 8) throw ContractError("corrupt parameter rank in " + path.string());
  p.shape.resize(rank);
  for (auto& d : p.shape) d = get<std::uint64_t>(in, path);
  return p;
}

void read_values(std::ifstream& in, const std::filesystem::path& path, Tensor& target) {
  in.read(reinterpret_cast<char*>(target.data()),
          static_cast<std::streamsize>(target.size() * sizeof(double)));
  if (!in) throw ContractError("truncated checkpoint " + path.string());
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const auto j = read_header(in, path);
  LoadedCheckpoint loaded;
  try {
    loaded.meta.epoch = j.value("epoch", 0);
    loaded.meta.seed = j.value("seed", std::uint64_t{0});
    loaded.meta.config_hash = j.value("config_hash", std::string());
    loaded.meta.extra = j.value("extra", nlohmann::json::object());
    auto config = ModelConfig::from_json(j.at("model"));
    // Initial weights are already part of the stored parameters.
    if (config.backbone_config.is_object()) config.backbone_config.erase("weights");
    loaded.model = std::make_unique<DualHeadModel>(config, 0);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("checkpoint metadata in " + path.string() + " is incomplete: " + e.what());
  }

  auto params = loaded.model->parameters();
  const auto count = get<std::uint32_t>(in, path);
  if (count != params.size())
    throw ContractError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                        std::to_string(params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto stored = read_parameter_header(in, path);
    Parameter* target = params[i];
    if (target->name != stored.name || target->value.shape() != stored.shape)
      throw ContractError("checkpoint parameter " + stored.name + shape_string(stored.shape) +
                          " does not match model parameter " + target->name +
                          shape_string(target->value.shape()));
    read_values(in, path, target->value);
  }
  return loaded;
}

std::map<std::string, Tensor> read_checkpoint_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  read_header(in, path);
  std::map<std::string, Tensor> out;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto stored = read_parameter_header(in, path);
    Tensor t(stored.shape);
    read_values(in, path, t);
    out.emplace(stored.name, std::move(t));
  }
  return out;
}

}  // namespace rfer
