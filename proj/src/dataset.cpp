#include "layerprune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "layerprune/error.hpp"

namespace layerprune {

Dataset Dataset::slice(int begin, int end) const {
  begin = std::clamp(begin, 0, size());
  end = std::clamp(end, begin, size());
  Dataset d;
  d.num_classes = num_classes;
  auto shape = images.shape();
  shape[0] = end - begin;
  d.images = Tensor(shape);
  const std::size_t per = images.stride0();
  std::copy(images.data() + begin * per, images.data() + end * per, d.images.data());
  d.labels.assign(labels.begin() + begin, labels.begin() + end);
  return d;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.samples < 1 || spec.num_classes < 2 || spec.size < 4)
    throw Error(ErrorCode::config, "synthetic dataset needs samples >= 1, classes >= 2, size >= 4");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.num_classes = spec.num_classes;
  d.images = Tensor({spec.samples, spec.channels, spec.size, spec.size});
  d.labels.resize(spec.samples);
  const double s = spec.size;
  for (int n = 0; n < spec.samples; ++n) {
    const int label = n % spec.num_classes;
    d.labels[n] = label;
    const double theta = std::numbers::pi * label / spec.num_classes + spec.jitter * gauss(rng);
    const double cycles = 2.0 + 3.0 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double contrast = 0.6 + 0.8 * unit(rng);
    const double cx = s * (0.3 + 0.4 * unit(rng)), cy = s * (0.3 + 0.4 * unit(rng));
    const double radius = s * (0.35 + 0.25 * unit(rng));
    std::vector<double> colour(spec.channels);
    for (double& c : colour) c = 0.4 + unit(rng);
    const double kx = std::cos(theta) * 2.0 * std::numbers::pi * cycles / s;
    const double ky = std::sin(theta) * 2.0 * std::numbers::pi * cycles / s;
    for (int y = 0; y < spec.size; ++y) {
      for (int x = 0; x < spec.size; ++x) {
        const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
        const double envelope = std::exp(-0.5 * r2);
        const double wave = contrast * envelope * std::sin(kx * x + ky * y + phase);
        for (int c = 0; c < spec.channels; ++c) d.images.at(n, c, y, x) = colour[c] * wave + spec.noise * gauss(rng);
      }
    }
  }
  return d;
}

Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& files, int max_samples) {
  constexpr int kRecord = 1 + 3 * 32 * 32;
  constexpr double kMean[3] = {0.4914, 0.4822, 0.4465};
  constexpr double kStd[3] = {0.2470, 0.2435, 0.2616};
  std::vector<unsigned char> raw;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open CIFAR batch " + f.string());
    raw.insert(raw.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (raw.size() % kRecord != 0) throw Error(ErrorCode::config, "CIFAR batch files have a truncated record");
  int n = static_cast<int>(raw.size() / kRecord);
  if (max_samples >= 0) n = std::min(n, max_samples);
  Dataset d;
  d.num_classes = 10;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + static_cast<std::size_t>(i) * kRecord;
    d.labels[i] = rec[0];
    if (rec[0] >= 10) throw Error(ErrorCode::config, "CIFAR label out of range");
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p)
        d.images[(static_cast<std::size_t>(i) * 3 + c) * 1024 + p] = (rec[1 + c * 1024 + p] / 255.0 - kMean[c]) / kStd[c];
  }
  return d;
}

std::vector<Batch> make_batches(const Dataset& data, int batch_size, std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw Error(ErrorCode::config, "batch size must be positive");
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t per = data.images.stride0();
  std::vector<Batch> batches;
  for (int start = 0; start < data.size(); start += batch_size) {
    const int count = std::min(batch_size, data.size() - start);
    auto shape = data.images.shape();
    shape[0] = count;
    Batch b;
    b.images = Tensor(shape);
    b.labels.resize(count);
    for (int i = 0; i < count; ++i) {
      const int src = order[start + i];
      std::copy(data.images.data() + src * per, data.images.data() + (src + 1) * per, b.images.data() + i * per);
      b.labels[i] = data.labels[src];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace layerprune
