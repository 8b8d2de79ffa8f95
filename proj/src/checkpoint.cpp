#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "gfrnet/model.hpp"

// Checkpoint layout (all integers and floats little-endian):
//   magic "GFRNETC1"
//   u32 depth, num_classes, gate_channels, in_channels
//   u8 variant (0 lrn, 1 gfrnet), u8 gate_mode (0 mul, 1 add),
//   u8 skip_offset, u8 reserved
//   u32 stage_channels[depth]
//   u32 entry_count, then per entry:
//     u32 name_len, name bytes, u32 shape[4] (n,c,h,w), f64 data[count]
// Entries are the learnable tensors followed by each batch-norm state's
// running_mean and running_var.

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace gfrnet {

namespace {

constexpr char kMagic[8] = {'G', 'F', 'R', 'N', 'E', 'T', 'C', '1'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u8(std::ostream& os, uint8_t v) { os.write(reinterpret_cast<const char*>(&v), 1); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw DataError("checkpoint: truncated while reading u32");
  return v;
}

uint8_t get_u8(std::istream& is) {
  uint8_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 1);
  if (!is) throw DataError("checkpoint: truncated while reading u8");
  return v;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const Shape s = t.shape();
  for (int64_t d : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<uint32_t>(d));
  std::vector<double> buf(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<double>(t[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  const uint32_t len = get_u32(is);
  if (len > 4096) throw DataError("checkpoint: implausible parameter name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw DataError("checkpoint: truncated parameter name");
  Shape s;
  s.n = get_u32(is);
  s.c = get_u32(is);
  s.h = get_u32(is);
  s.w = get_u32(is);
  // per-dim cap keeps the count product far from int64 overflow
  if (s.n > 1 << 15 || s.c > 1 << 15 || s.h > 1 << 15 || s.w > 1 << 15 ||
      s.count() > int64_t(1) << 30) {
    throw DataError("checkpoint: implausible shape " + s.str() + " for parameter " + name);
  }
  std::vector<double> buf(static_cast<size_t>(s.count()));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!is) throw DataError("checkpoint: truncated data for parameter " + name);
  Tensor t(s);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(buf[static_cast<size_t>(i)]);
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const ArchConfig& cfg, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  put_u32(os, static_cast<uint32_t>(cfg.depth));
  put_u32(os, static_cast<uint32_t>(cfg.num_classes));
  put_u32(os, static_cast<uint32_t>(cfg.gate_channels));
  put_u32(os, static_cast<uint32_t>(cfg.in_channels));
  put_u8(os, cfg.variant == Variant::lrn ? 0 : 1);
  put_u8(os, cfg.gate_mode == GateMode::mul ? 0 : 1);
  put_u8(os, static_cast<uint8_t>(cfg.skip_offset));
  put_u8(os, 0);
  for (int c : cfg.stage_channels) put_u32(os, static_cast<uint32_t>(c));

  put_u32(os, static_cast<uint32_t>(params.learnable.size() + 2 * params.bn.size()));
  for (const auto& entry : params.learnable) put_tensor(os, entry.name, entry.value);
  for (const auto& bn : params.bn) {
    put_tensor(os, bn.name + ".running_mean", bn.state.running_mean);
    put_tensor(os, bn.name + ".running_var", bn.state.running_var);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }

  ArchConfig cfg;
  cfg.depth = static_cast<int>(get_u32(is));
  cfg.num_classes = static_cast<int>(get_u32(is));
  cfg.gate_channels = static_cast<int>(get_u32(is));
  cfg.in_channels = static_cast<int>(get_u32(is));
  cfg.variant = get_u8(is) == 0 ? Variant::lrn : Variant::gfrnet;
  cfg.gate_mode = get_u8(is) == 0 ? GateMode::mul : GateMode::add;
  cfg.skip_offset = get_u8(is);
  get_u8(is);
  if (cfg.depth < 3 || cfg.depth > 16) throw DataError("checkpoint: implausible depth");
  for (int s = 0; s < cfg.depth; ++s) cfg.stage_channels.push_back(static_cast<int>(get_u32(is)));
  cfg.validate();

  Checkpoint out{cfg, make_param_shapes(cfg)};
  const uint32_t count = get_u32(is);
  const size_t expected = out.params.learnable.size() + 2 * out.params.bn.size();
  if (count != expected) {
    throw DataError("checkpoint: " + std::to_string(count) + " entries, expected " +
                    std::to_string(expected));
  }
  std::vector<char> seen(expected, 0);
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = get_tensor(is);
    Tensor* dst = nullptr;
    size_t slot = 0;
    try {
      if (name.ends_with(".running_mean")) {
        const int bi = out.params.bn_index(name.substr(0, name.size() - 13));
        dst = &out.params.bn[bi].state.running_mean;
        slot = out.params.learnable.size() + 2 * static_cast<size_t>(bi);
      } else if (name.ends_with(".running_var")) {
        const int bi = out.params.bn_index(name.substr(0, name.size() - 12));
        dst = &out.params.bn[bi].state.running_var;
        slot = out.params.learnable.size() + 2 * static_cast<size_t>(bi) + 1;
      } else {
        const int pi = out.params.param_index(name);
        dst = &out.params.learnable[pi].value;
        slot = static_cast<size_t>(pi);
      }
    } catch (const std::invalid_argument&) {
      throw DataError("checkpoint: unknown parameter " + name + " for this config");
    }
    if (!(dst->shape() == tensor.shape())) {
      throw DataError("checkpoint: shape " + tensor.shape().str() + " for " + name +
                      " does not match model " + dst->shape().str());
    }
    if (seen[slot]) throw DataError("checkpoint: duplicate entry " + name);
    seen[slot] = 1;
    *dst = std::move(tensor);
  }
  for (char s : seen) {
    if (!s) throw DataError("checkpoint: missing parameter entries");
  }
  return out;
}

}  // namespace gfrnet
