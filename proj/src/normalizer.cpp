#include "relstack/normalizer.hpp"

#include <cmath>
#include <fstream>

namespace relstack {

namespace {
constexpr double kStdFloor = 1e-6;

void welford_update(long long& n, Tensor& mean, Tensor& m2, const double* x, int dim) {
  ++n;
  for (int i = 0; i < dim; ++i) {
    const double d = x[i] - mean[i];
    mean[i] += d / n;
    m2[i] += d * (x[i] - mean[i]);
  }
}

double welford_std(long long n, const Tensor& m2, int i) {
  if (n < 2) return 1.0;  // no spread information yet: identity scaling
  return std::sqrt(m2[i] / n);
}
}  // namespace

void block_input_row(const Observation& obs, int i, double* out21) {
  for (int k = 0; k < 15; ++k) out21[k] = obs.blocks.at(i, k);
  for (int k = 0; k < 3; ++k) {
    out21[15 + k] = obs.goals.at(i, k);
    out21[18 + k] = obs.goals.at(i, k) - obs.blocks.at(i, k);
  }
}

Normalizer::Normalizer()
    : block_mean_(1, kBlockDim),
      block_m2_(1, kBlockDim),
      ee_mean_(1, kEeDim),
      ee_m2_(1, kEeDim) {}

void Normalizer::update(const Observation& obs) {
  double row[kBlockDim];
  for (int i = 0; i < obs.n(); ++i) {
    block_input_row(obs, i, row);
    welford_update(block_n_, block_mean_, block_m2_, row, kBlockDim);
  }
  welford_update(ee_n_, ee_mean_, ee_m2_, obs.ee.data(), kEeDim);
}

double Normalizer::block_std(int i) const { return welford_std(block_n_, block_m2_, i); }
double Normalizer::ee_std(int i) const { return welford_std(ee_n_, ee_m2_, i); }

void Normalizer::normalize_block_row(const double* in, double* out) const {
  for (int i = 0; i < kBlockDim; ++i)
    out[i] = (in[i] - block_mean_[i]) / std::max(block_std(i), kStdFloor);
}

void Normalizer::normalize_ee(const double* in, double* out) const {
  for (int i = 0; i < kEeDim; ++i)
    out[i] = (in[i] - ee_mean_[i]) / std::max(ee_std(i), kStdFloor);
}

void Normalizer::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("Normalizer::save: cannot open " + path);
  f << "relstack-normalizer v1\n" << block_n_ << " " << ee_n_ << "\n";
  auto dump = [&](const Tensor& t) {
    f.write(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
  };
  dump(block_mean_);
  dump(block_m2_);
  dump(ee_mean_);
  dump(ee_m2_);
  if (!f) throw Error("Normalizer::save: write failed for " + path);
}

void Normalizer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("Normalizer::load: cannot open " + path);
  std::string tag, version;
  f >> tag >> version >> block_n_ >> ee_n_;
  if (tag != "relstack-normalizer" || version != "v1")
    throw Error("Normalizer::load: bad header in " + path);
  f.ignore(1);  // newline after the counts
  auto slurp = [&](Tensor& t) {
    f.read(reinterpret_cast<char*>(t.data()), sizeof(double) * t.size());
  };
  slurp(block_mean_);
  slurp(block_m2_);
  slurp(ee_mean_);
  slurp(ee_m2_);
  if (!f) throw Error("Normalizer::load: truncated file " + path);
}

bool Normalizer::operator==(const Normalizer& o) const {
  return block_n_ == o.block_n_ && ee_n_ == o.ee_n_ && block_mean_ == o.block_mean_ &&
         block_m2_ == o.block_m2_ && ee_mean_ == o.ee_mean_ && ee_m2_ == o.ee_m2_;
}

}  // namespace relstack
