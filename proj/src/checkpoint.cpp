#include "varcaps/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace varcaps {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'P', 'K'};
constexpr std::uint32_t kSupportedMajor = 1;
constexpr std::size_t kSectionNameLen = 16;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct Writer {
  std::string buf;

  void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf += s;
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) i32(d);
    for (int i = 0; i < t.numel(); ++i) f64(t.array()[i]);
  }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint: truncated section payload");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank > 8) throw std::runtime_error("checkpoint: absurd tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(i32());
    const int n = shape_numel(shape);
    Array values(n);
    for (int i = 0; i < n; ++i) values[i] = f64();
    return {std::move(name), Tensor(std::move(shape), std::move(values))};
  }
};

std::string serialize_model(const Checkpoint& c) {
  Writer w;
  const ModelConfig& m = c.model;
  for (int v : {m.image_size, m.channels, m.conv1_maps, m.kernel, m.conv1_stride,
                m.conv2_stride, m.feature_maps, m.num_primary, m.primary_dim,
                m.num_classes, m.class_dim, m.routing_iterations, m.decoder_hidden})
    w.i32(v);
  w.u8(c.has_capsules ? 1 : 0);
  w.u8(c.has_decoder ? 1 : 0);
  w.u8(c.params.has_recon ? 1 : 0);
  return std::move(w.buf);
}

void parse_model(const std::string& bytes, Checkpoint& c) {
  Reader r{bytes};
  ModelConfig& m = c.model;
  for (int* v : {&m.image_size, &m.channels, &m.conv1_maps, &m.kernel,
                 &m.conv1_stride, &m.conv2_stride, &m.feature_maps,
                 &m.num_primary, &m.primary_dim, &m.num_classes, &m.class_dim,
                 &m.routing_iterations, &m.decoder_hidden})
    *v = r.i32();
  c.has_capsules = r.u8() != 0;
  c.has_decoder = r.u8() != 0;
  c.params.has_recon = r.u8() != 0;
}

std::string serialize_names(const std::vector<std::string>& names) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(names.size()));
  for (const std::string& n : names) w.str(n);
  return std::move(w.buf);
}

std::vector<std::string> parse_names(const std::string& bytes) {
  Reader r{bytes};
  const std::uint32_t n = r.u32();
  std::vector<std::string> names;
  names.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) names.push_back(r.str());
  return names;
}

std::string serialize_topology(const HierarchyTopology& t) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(t.layers.size()));
  for (int s : t.layers) w.i32(s);
  for (const auto& parents : t.parent_of)
    for (int p : parents) w.i32(p);
  return std::move(w.buf);
}

HierarchyTopology parse_topology(const std::string& bytes) {
  Reader r{bytes};
  HierarchyTopology t;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) t.layers.push_back(r.i32());
  for (std::uint32_t l = 0; l + 1 < n; ++l) {
    std::vector<int> parents(static_cast<std::size_t>(t.layers[l + 1]));
    for (int& p : parents) p = r.i32();
    t.parent_of.push_back(std::move(parents));
  }
  if (n > 0) t.validate();
  return t;
}

std::string serialize_params(const Checkpoint& c) {
  Writer w;
  std::vector<std::pair<std::string, const Tensor*>> entries;
  if (c.has_capsules) {
    entries.push_back({"conv1_w", &c.params.stem.conv1_w});
    entries.push_back({"conv1_b", &c.params.stem.conv1_b});
    entries.push_back({"conv2_w", &c.params.stem.conv2_w});
    entries.push_back({"conv2_b", &c.params.stem.conv2_b});
    entries.push_back({"transform", &c.params.transform});
  }
  for (std::size_t l = 0; l < c.params.dec_w.size(); ++l) {
    entries.push_back({"dec_w_" + std::to_string(l), &c.params.dec_w[l]});
    entries.push_back({"dec_b_" + std::to_string(l), &c.params.dec_b[l]});
  }
  if (c.params.has_recon) {
    entries.push_back({"recon_w", &c.params.recon_w});
    entries.push_back({"recon_b", &c.params.recon_b});
  }
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) w.tensor(name, *t);
  return std::move(w.buf);
}

void parse_params(const std::string& bytes, Checkpoint& c) {
  Reader r{bytes};
  const std::uint32_t n = r.u32();
  std::map<std::string, Tensor> by_name;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [name, t] = r.tensor();
    by_name.emplace(std::move(name), std::move(t));
  }
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    return it->second;
  };
  if (c.has_capsules) {
    c.params.stem.conv1_w = take("conv1_w");
    c.params.stem.conv1_b = take("conv1_b");
    c.params.stem.conv2_w = take("conv2_w");
    c.params.stem.conv2_b = take("conv2_b");
    c.params.transform = take("transform");
  }
  for (std::size_t l = 0;; ++l) {
    const std::string wk = "dec_w_" + std::to_string(l);
    if (!by_name.count(wk)) break;
    c.params.dec_w.push_back(take(wk));
    c.params.dec_b.push_back(take("dec_b_" + std::to_string(l)));
  }
  if (c.params.has_recon) {
    c.params.recon_w = take("recon_w");
    c.params.recon_b = take("recon_b");
  }
}

}  // namespace

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("model", serialize_model(ckpt));
  sections.emplace_back("config", ckpt.config_text);
  sections.emplace_back("classes", serialize_names(ckpt.class_names));
  sections.emplace_back("vocab", serialize_names(ckpt.vocab.tokens));
  sections.emplace_back("topology", serialize_topology(ckpt.topology));
  sections.emplace_back("params", serialize_params(ckpt));

  Writer header;
  header.buf.append(kMagic, 4);
  header.u32(ckpt.version_major);
  header.u32(ckpt.version_minor);
  header.u32(static_cast<std::uint32_t>(sections.size()));

  const std::size_t table_bytes = sections.size() * (kSectionNameLen + 16);
  std::uint64_t offset = header.buf.size() + table_bytes;
  for (const auto& [name, payload] : sections) {
    std::string padded = name;
    padded.resize(kSectionNameLen, '\0');
    header.buf += padded;
    header.u64(offset);
    header.u64(payload.size());
    offset += payload.size();
  }
  for (const auto& [name, payload] : sections) header.buf += payload;
  header.u64(fnv1a(header.buf));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(header.buf.data(), static_cast<std::streamsize>(header.buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 24)
    throw std::runtime_error("checkpoint " + path + ": file too short");

  const std::string body = buf.substr(0, buf.size() - 8);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(buf[buf.size() - 8 + i]))
              << (8 * i);
  if (fnv1a(body) != stored)
    throw std::runtime_error("checkpoint " + path +
                             ": checksum mismatch (corrupted file)");

  Reader r{body};
  r.need(4);
  if (std::memcmp(body.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint " + path + ": bad magic");
  r.pos = 4;

  Checkpoint ckpt;
  ckpt.version_major = r.u32();
  ckpt.version_minor = r.u32();
  if (ckpt.version_major > kSupportedMajor)
    throw std::runtime_error(
        "checkpoint " + path + ": format version " +
        std::to_string(ckpt.version_major) + " is newer than supported " +
        std::to_string(kSupportedMajor));

  const std::uint32_t n_sections = r.u32();
  if (n_sections > 64)
    throw std::runtime_error("checkpoint " + path + ": absurd section count");
  std::map<std::string, std::string> sections;
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    r.need(kSectionNameLen);
    std::string name = body.substr(r.pos, kSectionNameLen);
    name = name.substr(0, name.find('\0'));
    r.pos += kSectionNameLen;
    const std::uint64_t offset = r.u64();
    const std::uint64_t size = r.u64();
    if (offset + size > body.size())
      throw std::runtime_error("checkpoint " + path +
                               ": section '" + name + "' out of bounds");
    sections[name] = body.substr(offset, size);
  }

  auto need_section = [&](const std::string& name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end())
      throw std::runtime_error("checkpoint " + path + ": missing section '" +
                               name + "'");
    return it->second;
  };

  parse_model(need_section("model"), ckpt);
  ckpt.config_text = need_section("config");
  ckpt.class_names = parse_names(need_section("classes"));
  ckpt.vocab = ckpt.has_decoder
                   ? CharacteristicVocabulary::from_tokens(
                         parse_names(need_section("vocab")))
                   : CharacteristicVocabulary{};
  ckpt.topology = parse_topology(need_section("topology"));
  parse_params(need_section("params"), ckpt);
  return ckpt;
}

}  // namespace varcaps
