#include "relstack/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace relstack {

namespace {

constexpr const char* kFormatTag = "relstack-params v1";

void check_little_endian() {
  const uint32_t probe = 1;
  if (*reinterpret_cast<const uint8_t*>(&probe) != 1)
    throw Error("checkpoint io requires a little-endian host");
}

}  // namespace

Parameter& ParamSet::add(const std::string& name, int rows, int cols) {
  if (find(name)) throw Error("ParamSet: duplicate parameter name " + name);
  items_.push_back(std::make_unique<Parameter>(name, rows, cols));
  return *items_.back();
}

Parameter& ParamSet::add_affine_weight(const std::string& name, int fan_in, int fan_out,
                                       Rng& rng) {
  Parameter& p = add(name, fan_in, fan_out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
  return p;
}

Parameter& ParamSet::add_uniform(const std::string& name, int rows, int cols, double bound,
                                 Rng& rng) {
  Parameter& p = add(name, rows, cols);
  for (int i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
  return p;
}

Parameter* ParamSet::find(const std::string& name) {
  for (auto& p : items_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParamSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p->name == name) return p.get();
  return nullptr;
}

long long ParamSet::total_values() const {
  long long n = 0;
  for (const auto& p : items_) n += p->value.size();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& p : items_) p->grad.set_zero();
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (items_.size() != other.items_.size())
    throw Error("copy_values_from: parameter count mismatch");
  for (size_t i = 0; i < items_.size(); ++i) {
    if (items_[i]->name != other.items_[i]->name)
      throw Error("copy_values_from: name mismatch at " + items_[i]->name);
    items_[i]->value = other.items_[i]->value;
  }
}

void ParamSet::polyak_from(const ParamSet& live, double tau) {
  if (items_.size() != live.items_.size())
    throw Error("polyak_from: parameter count mismatch");
  for (size_t i = 0; i < items_.size(); ++i) {
    Tensor& target = items_[i]->value;
    const Tensor& source = live.items_[i]->value;
    require_same_shape(target, source, "polyak_from");
    for (int j = 0; j < target.size(); ++j)
      target[j] = (1.0 - tau) * target[j] + tau * source[j];
  }
}

bool ParamSet::values_equal(const ParamSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (size_t i = 0; i < items_.size(); ++i)
    if (!(items_[i]->value == other.items_[i]->value)) return false;
  return true;
}

void ParamSet::copy_all_from(const ParamSet& other) {
  items_.reserve(other.items_.size());
  for (const auto& p : other.items_) {
    auto clone = std::make_unique<Parameter>(p->name, p->value.rows(), p->value.cols());
    clone->value = p->value;
    clone->grad = p->grad;
    clone->adam_m = p->adam_m;
    clone->adam_v = p->adam_v;
    clone->adam_steps = p->adam_steps;
    items_.push_back(std::move(clone));
  }
}

namespace {

struct ManifestEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
};

void write_container(const std::string& path, const std::vector<ManifestEntry>& manifest,
                     const std::vector<const Tensor*>& tensors) {
  check_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint file for writing: " + path);
  out << kFormatTag << ' ' << manifest.size() << '\n';
  for (const auto& e : manifest) out << e.name << ' ' << e.rows << ' ' << e.cols << '\n';
  for (const Tensor* t : tensors)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(sizeof(double)) * t->size());
  if (!out) throw Error("short write to checkpoint file: " + path);
}

std::vector<ManifestEntry> read_manifest(std::ifstream& in, const std::string& path) {
  std::string tag_a, tag_b;
  size_t n = 0;
  in >> tag_a >> tag_b >> n;
  if (tag_a + " " + tag_b != kFormatTag)
    throw Error("unrecognized checkpoint format tag in " + path);
  std::vector<ManifestEntry> manifest(n);
  for (auto& e : manifest) in >> e.name >> e.rows >> e.cols;
  in.get();  // trailing newline before raw data
  if (!in) throw Error("truncated checkpoint manifest in " + path);
  return manifest;
}

void read_into(std::ifstream& in, const std::string& path, Tensor& t) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double)) * t.size());
  if (!in) throw Error("truncated checkpoint data in " + path);
}

}  // namespace

void ParamSet::save_values(const std::string& path) const {
  std::vector<ManifestEntry> manifest;
  std::vector<const Tensor*> tensors;
  for (const auto& p : items_) {
    manifest.push_back({p->name, p->value.rows(), p->value.cols()});
    tensors.push_back(&p->value);
  }
  write_container(path, manifest, tensors);
}

void ParamSet::load_values(const std::string& path) {
  check_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint file: " + path);
  const auto manifest = read_manifest(in, path);
  if (manifest.size() != items_.size())
    throw Error("checkpoint entry count mismatch in " + path + ": expected " +
                std::to_string(items_.size()) + ", got " + std::to_string(manifest.size()));
  for (size_t i = 0; i < manifest.size(); ++i) {
    Parameter& p = *items_[i];
    if (manifest[i].name != p.name || manifest[i].rows != p.value.rows() ||
        manifest[i].cols != p.value.cols())
      throw Error("checkpoint manifest mismatch at entry " + manifest[i].name + " in " + path);
    read_into(in, path, p.value);
  }
}

void ParamSet::save_opt_state(const std::string& path) const {
  std::vector<ManifestEntry> manifest;
  std::vector<const Tensor*> tensors;
  std::vector<Tensor> steps;
  steps.reserve(items_.size());
  for (const auto& p : items_) {
    manifest.push_back({p->name + ".m", p->adam_m.rows(), p->adam_m.cols()});
    tensors.push_back(&p->adam_m);
    manifest.push_back({p->name + ".v", p->adam_v.rows(), p->adam_v.cols()});
    tensors.push_back(&p->adam_v);
    steps.push_back(Tensor::scalar(static_cast<double>(p->adam_steps)));
    manifest.push_back({p->name + ".t", 1, 1});
    tensors.push_back(&steps.back());
  }
  write_container(path, manifest, tensors);
}

void ParamSet::load_opt_state(const std::string& path) {
  check_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open optimizer state file: " + path);
  const auto manifest = read_manifest(in, path);
  if (manifest.size() != items_.size() * 3)
    throw Error("optimizer state entry count mismatch in " + path);
  for (size_t i = 0; i < items_.size(); ++i) {
    Parameter& p = *items_[i];
    if (manifest[3 * i].name != p.name + ".m")
      throw Error("optimizer state manifest mismatch at " + p.name);
    read_into(in, path, p.adam_m);
    read_into(in, path, p.adam_v);
    Tensor t(1, 1);
    read_into(in, path, t);
    p.adam_steps = static_cast<long long>(t.scalar_value());
  }
}

namespace {

void adam_apply(Parameter& p, const AdamConfig& cfg) {
  p.adam_steps += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.adam_steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.adam_steps));
  for (int i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
    p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = p.adam_m[i] / bc1;
    const double vhat = p.adam_v[i] / bc2;
    p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  p.grad.set_zero();
}

}  // namespace

void adam_step(ParamSet& params, const AdamConfig& cfg) {
  for (size_t i = 0; i < params.count(); ++i) {
    if (!params.at(i).grad.all_finite())
      throw Error("adam_step: non-finite gradient in parameter " + params.at(i).name);
  }
  for (size_t i = 0; i < params.count(); ++i) adam_apply(params.at(i), cfg);
}

void adam_step(Parameter& p, const AdamConfig& cfg) {
  if (!p.grad.all_finite())
    throw Error("adam_step: non-finite gradient in parameter " + p.name);
  adam_apply(p, cfg);
}

}  // namespace relstack
