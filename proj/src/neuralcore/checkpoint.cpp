#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "etiobench/training.hpp"

namespace etio::nn {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'H', 'C'};

}  // namespace

ModelCheckpoint make_checkpoint(const IchNet& model, int fold, std::uint64_t seed) {
  ModelCheckpoint cp;
  cp.config = model.config();
  cp.fingerprint = config_fingerprint(cp.config);
  cp.fold = fold;
  cp.seed = seed;
  for (const auto& [name, t] : model.parameters()) {
    // Stored at file precision so an in-memory checkpoint matches its decoded copy.
    std::vector<double> copy;
    for (double v : t.values()) copy.push_back(static_cast<float>(v));
    cp.tensors.emplace_back(name, Tensor::from(t.shape(), std::move(copy)));
  }
  return cp;
}

IchNet model_from_checkpoint(const ModelCheckpoint& cp) {
  if (config_fingerprint(cp.config) != cp.fingerprint)
    throw NnError("checkpoint fingerprint mismatch: stored " + cp.fingerprint + ", config hashes to " +
                  config_fingerprint(cp.config));
  IchNet model(cp.config);
  std::set<std::string> seen;
  for (const auto& [name, t] : cp.tensors) {
    if (!seen.insert(name).second) throw NnError("checkpoint lists parameter " + name + " twice");
    Tensor& dst = model.parameter(name);
    if (dst.shape() != t.shape())
      throw NnError("checkpoint parameter " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(dst.shape()));
    std::copy(t.values().begin(), t.values().end(), dst.values().begin());
  }
  for (const auto& [name, t] : model.parameters())
    if (!seen.count(name)) throw NnError("checkpoint is missing parameter " + name);
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& cp) {
  nlohmann::json header;
  header["config"] = config_to_json(cp.config);
  header["fingerprint"] = cp.fingerprint;
  header["fold"] = cp.fold;
  header["seed"] = cp.seed;
  header["tensors"] = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : cp.tensors) {
    header["tensors"][name] = {{"shape", t.shape()}, {"offset", offset}};
    offset += 4 * t.size();
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : cp.tensors)
    for (double d : t.values()) {
      const float f = static_cast<float>(d);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw NnError("bad magic: not an ICHC checkpoint");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (bytes.size() < 8 + static_cast<std::size_t>(len)) throw NnError("truncated checkpoint header");
  const auto payload = bytes.subspan(8 + len);

  ModelCheckpoint cp;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    cp.config = config_from_json(header.at("config"));
    cp.fingerprint = header.at("fingerprint").get<std::string>();
    cp.fold = header.at("fold").get<int>();
    cp.seed = header.at("seed").get<std::uint64_t>();
    std::vector<std::tuple<std::size_t, std::string, Shape>> entries;
    for (const auto& [name, e] : header.at("tensors").items())
      entries.emplace_back(e.at("offset").get<std::size_t>(), name, e.at("shape").get<Shape>());
    std::sort(entries.begin(), entries.end());
    for (const auto& [offset, name, shape] : entries) {
      const std::size_t n = shape_size(shape);
      if (offset + 4 * n > payload.size()) throw NnError("checkpoint tensor " + name + " runs past the payload");
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[offset + 4 * i + b]) << (8 * b);
        float f;
        std::memcpy(&f, &bits, 4);
        v[i] = f;
      }
      cp.tensors.emplace_back(name, Tensor::from(shape, std::move(v)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw NnError(std::string("malformed checkpoint header: ") + e.what());
  }
  return cp;
}

void write_checkpoint(const ModelCheckpoint& cp, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(cp);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NnError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NnError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace etio::nn
