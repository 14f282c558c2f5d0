#pragma once

#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/nn/optim.hpp"

namespace pmc::nn {

// "PMCC" model container:
//   magic "PMCC" | version u16 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32[rank], f32[numel]
// All integers and floats little-endian.
inline constexpr std::uint16_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

Bytes write_container(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container(std::span<const std::uint8_t> bytes);

Bytes write_parameters(const ParameterRefs& params);

// Copies values by name into `params`; every parameter must be present with a
// matching shape. Optimizer state is reset.
void load_parameters(const ParameterRefs& params, std::span<const std::uint8_t> bytes);

}  // namespace pmc::nn
