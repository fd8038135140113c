#include "etiobench/ichnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "etiobench/seeding.hpp"

namespace etio::nn {

void IchNetConfig::validate() const {
  if (input_dims.nx < 1 || input_dims.ny < 1 || input_dims.nz < 1) throw NnError("config: input dims must be positive");
  if (slow_stride < 2) throw NnError("config: slow_stride must be at least 2");
  if (input_dims.nz % slow_stride != 0) throw NnError("config: input depth must be a multiple of slow_stride");
  if (class_count != kClassCount) throw NnError("config: class_count must be 6");
  for (int w : fast_widths)
    if (w < 1) throw NnError("config: pathway widths must be positive");
  if (embedding_dim < 1) throw NnError("config: embedding_dim must be positive");
  if (!(margin_main > 0.0)) throw NnError("config: margin must be positive");
  if (margin_minor != margin_main / 2.0) throw NnError("config: minority margin must be half the main margin");
  if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 0) throw NnError("config: bad optimizer settings");
}

nlohmann::json config_to_json(const IchNetConfig& c) {
  return {
      {"input_dims", {c.input_dims.nx, c.input_dims.ny, c.input_dims.nz}},
      {"slow_stride", c.slow_stride},
      {"fast_widths", c.fast_widths},
      {"slow_width_factor", IchNetConfig::kSlowWidthFactor},
      {"embedding_dim", c.embedding_dim},
      {"class_count", c.class_count},
      {"margin_main", c.margin_main},
      {"margin_minor", c.margin_minor},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"epsilon", c.epsilon},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
  };
}

IchNetConfig config_from_json(const nlohmann::json& j) {
  try {
    IchNetConfig c;
    const auto& d = j.at("input_dims");
    c.input_dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    c.slow_stride = j.at("slow_stride").get<int>();
    c.fast_widths = j.at("fast_widths").get<std::array<int, 3>>();
    if (j.at("slow_width_factor").get<int>() != IchNetConfig::kSlowWidthFactor)
      throw NnError("config: unsupported slow width factor");
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.class_count = j.at("class_count").get<int>();
    c.margin_main = j.at("margin_main").get<double>();
    c.margin_minor = j.at("margin_minor").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw NnError(std::string("config: ") + e.what());
  }
}

std::string config_fingerprint(const IchNetConfig& config) {
  auto j = config_to_json(config);
  j.erase("seed");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

Tensor kaiming_init(const Shape& shape, int fan_in, std::uint64_t seed) {
  if (fan_in < 1) throw NnError("kaiming_init: fan_in must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(shape, std::move(v), true);
}

Tensor normalize_hu(const voxvol::Volume& volume) {
  const auto& d = volume.dims();
  std::vector<double> v(d.count());
  const auto src = volume.voxels();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp<double>(src[i], 0.0, 80.0) / 80.0;
  return Tensor::from({1, d.nz, d.ny, d.nx}, std::move(v));
}

IchNet::IchNet(IchNetConfig config) : config_(config) {
  config_.validate();
  const auto& fw = config_.fast_widths;
  const int ss = config_.slow_stride;
  int fast_in = 1, slow_in = 1;
  for (int s = 0; s < 3; ++s) {
    const std::string n = std::to_string(s + 1);
    add_param("fast.conv" + n + ".weight", {fw[s], fast_in, 3, 3, 3});
    add_param("fast.conv" + n + ".bias", {fw[s]});
    add_param("slow.conv" + n + ".weight", {config_.slow_width(s), slow_in, 3, 3, 3});
    add_param("slow.conv" + n + ".bias", {config_.slow_width(s)});
    fast_in = fw[s];
    slow_in = config_.slow_width(s);
    if (s < 2) {
      add_param("lateral" + n + ".weight", {config_.lateral_width(s), fw[s], ss, 1, 1});
      add_param("lateral" + n + ".bias", {config_.lateral_width(s)});
      slow_in += config_.lateral_width(s);
    }
  }
  const int features = fw[2] + config_.slow_width(2);
  add_param("embed.weight", {config_.embedding_dim, features});
  add_param("embed.bias", {config_.embedding_dim});
  add_param("head.weight", {config_.class_count, config_.embedding_dim});
  add_param("head.bias", {config_.class_count});
  initialize(config_.seed);
}

Tensor& IchNet::add_param(const std::string& name, Shape shape) {
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
  return params_.back().second;
}

Tensor& IchNet::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NnError("unknown parameter " + name);
  return params_[it->second].second;
}

const Tensor& IchNet::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NnError("unknown parameter " + name);
  return params_[it->second].second;
}

void IchNet::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, t] = params_[i];
    auto vals = t.values();
    if (name.ends_with(".bias")) {
      std::fill(vals.begin(), vals.end(), 0.0);
      continue;
    }
    const auto& s = t.shape();
    int fan_in = 1;
    for (std::size_t a = 1; a < s.size(); ++a) fan_in *= s[a];
    const Tensor init = kaiming_init(s, fan_in, derive_seed(seed, {0x1417, i}));
    std::copy(init.values().begin(), init.values().end(), vals.begin());
  }
}

void IchNet::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

ForwardOutput IchNet::forward(const Tensor& input) const {
  const auto& d = config_.input_dims;
  if (input.shape() != Shape{1, d.nz, d.ny, d.nx})
    throw NnError("forward: input shape " + shape_string(input.shape()) + " does not match config " +
                  shape_string({1, d.nz, d.ny, d.nx}));
  const Triple down{1, 2, 2}, same{1, 1, 1};
  const int ss = config_.slow_stride;
  auto p = [this](const std::string& n) -> const Tensor& { return parameter(n); };

  Tensor fast = input;
  Tensor slow = take_slices(input, ss / 2, ss);
  for (int s = 0; s < 3; ++s) {
    const std::string n = std::to_string(s + 1);
    fast = relu(conv3d(fast, p("fast.conv" + n + ".weight"), p("fast.conv" + n + ".bias"), down, same));
    slow = relu(conv3d(slow, p("slow.conv" + n + ".weight"), p("slow.conv" + n + ".bias"), down, same));
    if (s < 2) {
      const Tensor lateral =
          conv3d(fast, p("lateral" + n + ".weight"), p("lateral" + n + ".bias"), {ss, 1, 1}, {0, 0, 0});
      slow = concat(slow, lateral);
    }
  }
  const Tensor features = concat(global_avg_pool(slow), global_avg_pool(fast));
  Tensor embedding = relu(linear(features, p("embed.weight"), p("embed.bias")));
  Tensor probs = softmax(linear(embedding, p("head.weight"), p("head.bias")));
  return {std::move(probs), std::move(embedding)};
}

std::vector<ForwardOutput> IchNet::forward(std::span<const Tensor> batch) const {
  std::vector<ForwardOutput> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(forward(x));
  return out;
}

Tensor weighted_ce_loss(const Tensor& probs, Etiology label, const ClassVector& weights) {
  return weighted_neg_log(probs, index_of(label), (weights[index_of(label)]), kProbabilityFloor);
}

double weighted_ce_value(std::span<const double> probs, Etiology label, const ClassVector& weights) {
  const double p = std::max(probs[index_of(label)], kProbabilityFloor);
  return -weights[index_of(label)] * std::log(p);
}

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin) {
  if (!(margin > 0.0)) throw NnError("triplet_loss: margin must be positive");
  return triplet_hinge(anchor, positive, negative, margin);
}

double triplet_margin(Etiology anchor_class, const IchNetConfig& config) {
  const bool main = anchor_class == Etiology::aneurysm || anchor_class == Etiology::hypertensive;
  return (main ? config.margin_main : config.margin_minor);
}

std::vector<Triplet> mine_triplets(std::span<const Etiology> labels, std::mt19937_64& rng) {
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_p(0, pos.size() - 1), pick_n(0, neg.size() - 1);
    const std::size_t p = pos[pick_p(rng)];
    const std::size_t n = neg[pick_n(rng)];
    out.push_back({a, p, n});
  }
  return out;
}

LossTerms total_loss(std::span<const LossItem> batch, std::span<const Triplet> triplets, const ClassVector& weights,
                     const IchNetConfig& config) {
  if (batch.empty()) throw NnError("total_loss: empty batch");
  std::vector<Tensor> ce;
  ce.reserve(batch.size());
  for (const auto& item : batch) ce.push_back(weighted_ce_loss(item.probs, item.label, weights));
  LossTerms out;
  Tensor ce_mean = scale(sum(ce), 1.0 / (batch.size()));
  out.cross_entropy = ce_mean.item();
  if (triplets.empty()) {
    out.total = ce_mean;
    return out;
  }
  std::vector<Tensor> tl;
  for (const auto& t : triplets) {
    const auto& a = batch[t.anchor];
    tl.push_back(triplet_loss(a.embedding, batch[t.positive].embedding, batch[t.negative].embedding,
                              triplet_margin(a.label, config)));
  }
  Tensor tl_mean = scale(sum(tl), 1.0 / (tl.size()));
  out.triplet = tl_mean.item();
  out.triplet_count = tl.size();
  out.total = add(ce_mean, tl_mean);
  return out;
}

}  // namespace etio::nn
