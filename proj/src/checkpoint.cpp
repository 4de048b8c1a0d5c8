#include "mtn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace mtn {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'N', 'F'};
constexpr std::uint32_t kMaxNameLength = 1u << 12;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ContractError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

NamedTensor pack(const std::string& name, const std::vector<std::size_t>& shape,
                 std::span<const double> values) {
  NamedTensor t{name, {}, {}};
  for (std::size_t d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.data.reserve(values.size());
  for (double v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

const NamedTensor& require(const std::map<std::string, const NamedTensor*>& by_name,
                           const std::string& name) {
  const auto it = by_name.find(name);
  if (it == by_name.end()) throw ContractError("checkpoint: missing tensor '" + name + "'");
  return *it->second;
}

}  // namespace

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw ContractError("checkpoint: tensor '" + t.name + "' dims do not match data");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float f : t.data) put_f32(out, f);
  }
  if (!out) throw ContractError("checkpoint: write failed");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ContractError("checkpoint: bad magic (expected MTNF)");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t len = get_u32(in);
    if (len > kMaxNameLength) throw ContractError("checkpoint: tensor name too long");
    t.name.resize(len);
    if (!in.read(t.name.data(), len)) throw ContractError("checkpoint: truncated file");
    const std::uint32_t rank = get_u32(in);
    if (rank > kMaxRank) throw ContractError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
    std::uint64_t size = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(get_u32(in));
      size *= t.dims.back();
      if (size > (1ull << 32)) throw ContractError("checkpoint: tensor '" + t.name + "' too large");
    }
    t.data.resize(size);
    for (auto& f : t.data) f = get_f32(in);
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save_checkpoint(std::ostream& out, const MultiScaleField& field, int stage) {
  const FieldConfig& c = field.config();
  std::vector<NamedTensor> tensors;
  tensors.push_back({"meta.fourier_bands", {1}, {static_cast<float>(c.fourier_bands)}});
  tensors.push_back({"meta.density_blob",
                     {3},
                     {c.density_blob ? 1.0f : 0.0f, static_cast<float>(c.blob_strength),
                      static_cast<float>(c.blob_radius)}});
  tensors.push_back({"meta.stage", {1}, {static_cast<float>(stage)}});
  if (c.fourier_mode == FourierMode::kRandomGaussian) {
    const auto rows = static_cast<std::size_t>(c.channels) * c.fourier_bands;
    tensors.push_back(pack("fourier.projection", {rows, static_cast<std::size_t>(c.channels)},
                           field.fourier_projection()));
  }
  for (const auto& ref : field.parameters()) tensors.push_back(pack(ref.name, ref.shape, ref.values));
  write_tensors(out, tensors);
}

void save_checkpoint(const std::filesystem::path& path, const MultiScaleField& field, int stage) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  save_checkpoint(out, field, stage);
}

Checkpoint load_checkpoint(std::istream& in) {
  const auto tensors = read_tensors(in);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  FieldConfig c;
  c.fourier_bands = static_cast<int>(require(by_name, "meta.fourier_bands").data.at(0));
  const auto& blob = require(by_name, "meta.density_blob").data;
  c.density_blob = blob.at(0) != 0.0f;
  c.blob_strength = blob.at(1);
  c.blob_radius = blob.at(2);
  const int stage = static_cast<int>(require(by_name, "meta.stage").data.at(0));
  for (int level = 1; level <= kNumPlaneLevels; ++level) {
    const auto& dims = require(by_name, "plane." + std::to_string(level) + ".xy").dims;
    if (dims.size() != 3) throw ContractError("checkpoint: plane tensors must have rank 3");
    c.plane_resolution[level - 1] = static_cast<int>(dims[0]);
    c.channels = static_cast<int>(dims[2]);
  }
  c.vector_resolution = static_cast<int>(require(by_name, "trivector.x").dims.at(0));
  int layers = 0;
  while (by_name.count("decoder." + std::to_string(layers) + ".weight")) ++layers;
  if (layers == 0) throw ContractError("checkpoint: no decoder layers");
  c.hidden_layers = layers - 1;
  c.hidden_width = static_cast<int>(require(by_name, "decoder.0.weight").dims.at(1));
  if (layers == 1) c.hidden_width = FieldConfig{}.hidden_width;
  c.fourier_mode = by_name.count("fourier.projection") ? FourierMode::kRandomGaussian : FourierMode::kLogBands;
  if (stage < 1 || stage > kNumLevels) throw ContractError("checkpoint: stage out of range");

  Checkpoint cp{MultiScaleField::zeros(c), stage};
  if (c.fourier_mode == FourierMode::kRandomGaussian) {
    const auto& data = by_name.at("fourier.projection")->data;
    cp.field.set_fourier_projection(std::vector<double>(data.begin(), data.end()));
  }
  for (auto& ref : cp.field.parameters()) {
    const NamedTensor& t = require(by_name, ref.name);
    std::vector<std::uint32_t> expect;
    for (std::size_t d : ref.shape) expect.push_back(static_cast<std::uint32_t>(d));
    if (t.dims != expect) throw ContractError("checkpoint: tensor '" + ref.name + "' has unexpected shape");
    for (std::size_t i = 0; i < t.data.size(); ++i) ref.values[i] = t.data[i];
  }
  cp.field.decoder().validate();
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace mtn
