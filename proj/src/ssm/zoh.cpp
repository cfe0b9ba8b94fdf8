#include <cmath>

#include "cmunet/ssm.hpp"

namespace cmunet::ssm {

double zoh_phi(double z) {
  if (std::abs(z) < kSeriesThreshold) return 1.0 + z * (0.5 + z / 6.0);
  return std::expm1(z) / z;
}

double zoh_phi_derivative(double z) {
  if (std::abs(z) < kSeriesThreshold) return 0.5 + z / 3.0;
  return (std::exp(z) - std::expm1(z) / z) / z;
}

Discretized discretize(std::span<const double> a_row, std::span<const double> b_k, double delta_k) {
  if (a_row.size() != b_k.size()) throw DimensionError("discretize: A row and B size differ");
  if (!(delta_k > 0)) throw ContractError("discretize: delta must be positive");
  Discretized out;
  out.a_bar.resize(a_row.size());
  out.b_bar.resize(a_row.size());
  for (std::size_t n = 0; n < a_row.size(); ++n) {
    const double z = delta_k * a_row[n];
    out.a_bar[n] = std::exp(z);
    out.b_bar[n] = zoh_phi(z) * delta_k * b_k[n];
  }
  return out;
}

void exclusive_scan(std::vector<AffineScanElement>& elements) {
  const std::size_t n = elements.size();
  if (n == 0) return;
  std::size_t size = 1;
  while (size < n) size <<= 1;
  elements.resize(size);  // identity padding

  // Up-sweep: node i accumulates the span ending at i.
  for (std::size_t stride = 1; stride < size; stride <<= 1) {
    for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) {
      elements[i] = then(elements[i - stride], elements[i]);
    }
  }
  // Down-sweep: left child inherits the parent prefix, right child gets
  // parent prefix followed by the left subtree total.
  elements[size - 1] = AffineScanElement{};
  for (std::size_t stride = size >> 1; stride >= 1; stride >>= 1) {
    for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) {
      const AffineScanElement left_total = elements[i - stride];
      elements[i - stride] = elements[i];
      elements[i] = then(elements[i], left_total);
    }
  }
  elements.resize(n);
}

}  // namespace cmunet::ssm
