#include "pmc/nn/container.hpp"

#include <limits>
#include <unordered_map>

namespace pmc::nn {

namespace {
constexpr std::string_view kMagic = "PMCC";
}

Bytes write_container(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

std::vector<NamedTensor> read_container(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic) {
    throw FormatError("not a PMCC container (bad magic)");
  }
  const auto version = r.u16();
  if (version != kContainerVersion) throw FormatError("unsupported PMCC version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const auto name_len = r.u16();
    auto name = r.raw(name_len);
    nt.name.assign(name.begin(), name.end());
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 4) throw FormatError("tensor '" + nt.name + "' exceeds container size");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    nt.tensor = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after PMCC container");
  return out;
}

Bytes write_parameters(const ParameterRefs& params) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const Parameter* p : params) {
    Tensor<float> t(p->value().shape, p->value().data);
    tensors.push_back({p->name, std::move(t)});
  }
  return write_container(tensors);
}

void load_parameters(const ParameterRefs& params, std::span<const std::uint8_t> bytes) {
  auto tensors = read_container(bytes);
  std::unordered_map<std::string, Tensor<float>*> by_name;
  for (auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("container is missing tensor '" + p->name + "'");
    if (it->second->shape != p->value().shape) {
      throw FormatError("tensor '" + p->name + "' has shape " + to_string(it->second->shape) + ", expected " +
                        to_string(p->value().shape));
    }
    p->value().data = it->second->data;
    p->value().grad.clear();
    p->adam_m = Tensor<float>(p->value().shape, 0.0f);
    p->adam_v = Tensor<float>(p->value().shape, 0.0f);
    p->step_count = 0;
  }
}

}  // namespace pmc::nn
