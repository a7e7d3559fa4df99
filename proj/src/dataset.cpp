#include "varcaps/dataset.hpp"

#include "varcaps/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace varcaps {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Splits one CSV line into fields; double quotes wrap cells containing the
// separator, "" escapes a quote inside a quoted cell.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && trim(cur).empty()) {
      quoted = true;
      cur.clear();
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote");
  fields.push_back(cur);
  return fields;
}

void infer_domain_type(SampleRecord& rec) {
  std::vector<std::string> parts;
  std::stringstream ss(rec.image_name);
  std::string part;
  while (std::getline(ss, part, '/')) parts.push_back(part);
  if (parts.size() >= 3) {
    rec.domain = parts[parts.size() - 3];
    rec.type_name = parts[parts.size() - 2];
  } else if (parts.size() == 2) {
    rec.type_name = parts[0];
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::set<std::string> parse_characteristics(const std::string& cell,
                                            const std::string& delimiters) {
  std::set<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    const std::string tok = lower(trim(cur));
    if (!tok.empty()) tokens.insert(tok);
    cur.clear();
  };
  for (char c : cell) {
    if (delimiters.find(c) != std::string::npos)
      flush();
    else
      cur += c;
  }
  flush();
  if (tokens.empty())
    throw std::runtime_error("characteristics cell is empty after parsing: '" +
                             cell + "'");
  return tokens;
}

DatasetManifest load_manifest(const std::string& path,
                              const ManifestOptions& opts) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("manifest " + path + " is empty");

  auto row_error = [&](std::size_t row, const std::string& what) {
    return std::runtime_error("manifest " + path + " row " +
                              std::to_string(row + 1) + ": " + what);
  };

  {
    std::vector<std::string> header;
    try {
      header = split_csv_line(lines[0]);
    } catch (const std::exception& e) {
      throw row_error(0, e.what());
    }
    if (header.size() != 2 || lower(trim(header[0])) != "image_name" ||
        lower(trim(header[1])) != "characteristics")
      throw row_error(0, "expected header 'image_name,characteristics'");
  }

  DatasetManifest manifest;
  manifest.source_path = path;
  std::set<std::string> seen;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (trim(lines[row]).empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(lines[row]);
    } catch (const std::exception& e) {
      throw row_error(row, e.what());
    }
    if (fields.size() != 2)
      throw row_error(row, "expected 2 columns, found " +
                               std::to_string(fields.size()));
    SampleRecord rec;
    rec.image_name = trim(fields[0]);
    if (rec.image_name.empty()) throw row_error(row, "empty image name");
    if (!seen.insert(rec.image_name).second)
      throw row_error(row, "duplicate image name '" + rec.image_name + "'");
    if (trim(fields[1]).empty())
      throw row_error(row, "empty characteristics cell");
    try {
      rec.characteristics =
          parse_characteristics(fields[1], opts.token_delimiters);
    } catch (const std::exception& e) {
      throw row_error(row, e.what());
    }
    infer_domain_type(rec);
    manifest.samples.push_back(std::move(rec));
  }
  if (manifest.samples.empty())
    throw std::runtime_error("manifest " + path + " has no data rows");

  std::sort(manifest.samples.begin(), manifest.samples.end(),
            [](const SampleRecord& a, const SampleRecord& b) {
              return a.image_name < b.image_name;
            });

  if (opts.expect_full_dataset) {
    std::map<std::string, std::map<std::string, int>> counts;
    for (const SampleRecord& r : manifest.samples)
      ++counts[r.domain][r.type_name];
    bool ok = counts.size() == 3 && manifest.samples.size() == 3000;
    for (const auto& [domain, types] : counts) {
      if (types.size() != 5) ok = false;
      for (const auto& [type, n] : types)
        if (n != 200) ok = false;
    }
    if (!ok)
      throw std::runtime_error(
          "manifest " + path +
          " does not match the full dataset layout (3 domains x 5 types x "
          "200 images, 3000 total); found " +
          std::to_string(counts.size()) + " domains, " +
          std::to_string(manifest.samples.size()) + " samples");
  }
  return manifest;
}

SplitSpec load_split(const std::string& train_path,
                     const std::string& test_path,
                     const DatasetManifest& manifest, bool expect_real_sizes) {
  std::set<std::string> known;
  for (const SampleRecord& r : manifest.samples) known.insert(r.image_name);

  auto read_names = [&](const std::string& path) {
    std::set<std::string> names;
    for (const std::string& raw : read_lines(path)) {
      const std::string name = trim(raw);
      if (name.empty()) continue;
      if (!known.count(name))
        throw std::runtime_error("split " + path + ": name '" + name +
                                 "' is not in the manifest");
      names.insert(name);
    }
    if (names.empty())
      throw std::runtime_error("split " + path + " lists no images");
    return names;
  };

  SplitSpec split;
  split.train_names = read_names(train_path);
  split.test_names = read_names(test_path);
  for (const std::string& name : split.test_names)
    if (split.train_names.count(name))
      throw std::runtime_error("split overlap: '" + name +
                               "' appears in both train and test");
  if (expect_real_sizes &&
      (split.train_names.size() != 2400 || split.test_names.size() != 600))
    throw std::runtime_error(
        "split sizes " + std::to_string(split.train_names.size()) + "/" +
        std::to_string(split.test_names.size()) +
        " do not match the released 2400/600 train/test split");
  return split;
}

namespace {

struct RawImage {
  int h = 0, w = 0, c = 0;
  std::vector<double> pix;  // row-major [h][w][c]
};

// netpbm token reader: skips whitespace and # comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
    } else if (!std::isspace(ch)) {
      tok += static_cast<char>(ch);
      while ((ch = in.get()) != EOF && !std::isspace(ch) && ch != '#')
        tok += static_cast<char>(ch);
      if (ch == '#') in.unget();
      return tok;
    }
  }
  throw std::runtime_error("image " + path + ": truncated header");
}

int next_int(std::istream& in, const std::string& path) {
  const std::string tok = next_token(in, path);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw std::runtime_error("image " + path + ": bad header token '" + tok + "'");
  }
}

RawImage read_netpbm(std::istream& in, const std::string& magic,
                     const std::string& path) {
  RawImage img;
  img.c = (magic == "P3" || magic == "P6") ? 3 : 1;
  img.w = next_int(in, path);
  img.h = next_int(in, path);
  const int maxval = next_int(in, path);
  if (img.w < 1 || img.h < 1)
    throw std::runtime_error("image " + path + ": bad dimensions");
  if (maxval < 1 || maxval > 255)
    throw std::runtime_error("image " + path + ": unsupported maxval " +
                             std::to_string(maxval));
  const std::size_t n = static_cast<std::size_t>(img.h) * img.w * img.c;
  img.pix.resize(n);
  if (magic == "P2" || magic == "P3") {
    for (std::size_t i = 0; i < n; ++i) {
      int v;
      if (!(in >> v))
        throw std::runtime_error("image " + path + ": truncated payload");
      img.pix[i] = static_cast<double>(v) / maxval;
    }
  } else {
    // exactly one whitespace byte separates the header from binary data;
    // next_int already consumed it
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw std::runtime_error("image " + path + ": truncated payload");
    for (std::size_t i = 0; i < n; ++i)
      img.pix[i] = static_cast<double>(buf[i]) / maxval;
  }
  return img;
}

std::uint32_t read_u32le(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4)
    throw std::runtime_error("image " + path + ": truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

RawImage read_mdic(std::istream& in, const std::string& path) {
  RawImage img;
  img.h = static_cast<int>(read_u32le(in, path));
  img.w = static_cast<int>(read_u32le(in, path));
  img.c = static_cast<int>(read_u32le(in, path));
  if (img.h < 1 || img.w < 1 || img.c < 1 || img.c > 4)
    throw std::runtime_error("image " + path + ": bad MDIC dimensions");
  const std::size_t n = static_cast<std::size_t>(img.h) * img.w * img.c;
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw std::runtime_error("image " + path + ": truncated payload");
  img.pix.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = static_cast<std::uint32_t>(buf[4 * i]) |
                      (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    img.pix[i] = static_cast<double>(f);
  }
  return img;
}

}  // namespace

Tensor load_image(const std::string& path, int target_h, int target_w,
                  const ImageOptions& opts) {
  if (target_h < 1 || target_w < 1)
    throw std::invalid_argument("load_image: target extents must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);

  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in) throw std::runtime_error("image " + path + ": truncated header");

  RawImage img;
  if (m0 == 'P' && (m1 == '2' || m1 == '3' || m1 == '5' || m1 == '6')) {
    img = read_netpbm(in, std::string() + m0 + m1, path);
  } else if (m0 == 'M' && m1 == 'D') {
    char m2 = 0, m3 = 0;
    in.get(m2);
    in.get(m3);
    if (!in || m2 != 'I' || m3 != 'C')
      throw std::runtime_error("image " + path + ": unsupported magic number");
    img = read_mdic(in, path);
  } else {
    throw std::runtime_error("image " + path + ": unsupported magic number '" +
                             std::string() + m0 + m1 + "'");
  }

  if (opts.grayscale && img.c == 3) {
    std::vector<double> gray(static_cast<std::size_t>(img.h) * img.w);
    for (std::size_t i = 0; i < gray.size(); ++i)
      gray[i] = 0.299 * img.pix[3 * i] + 0.587 * img.pix[3 * i + 1] +
                0.114 * img.pix[3 * i + 2];
    img.pix = std::move(gray);
    img.c = 1;
  }

  std::vector<double> resized(static_cast<std::size_t>(target_h) * target_w *
                              img.c);
  for (int y = 0; y < target_h; ++y) {
    const int sy = static_cast<int>(static_cast<long long>(y) * img.h / target_h);
    for (int x = 0; x < target_w; ++x) {
      const int sx = static_cast<int>(static_cast<long long>(x) * img.w / target_w);
      for (int ch = 0; ch < img.c; ++ch)
        resized[(static_cast<std::size_t>(y) * target_w + x) * img.c + ch] =
            img.pix[(static_cast<std::size_t>(sy) * img.w + sx) * img.c + ch];
    }
  }
  try {
    return Tensor({target_h, target_w, img.c}, resized);
  } catch (const std::exception& e) {
    throw std::runtime_error("image " + path + ": " + e.what());
  }
}

std::set<std::string> synth_tokens_for(const SynthSampleInfo& info) {
  std::set<std::string> tokens{info.type_name};
  if (info.vivid) tokens.insert("vivid");
  if (info.trimmed) tokens.insert("trimmed");
  if (info.shaded) tokens.insert("shaded");
  if (info.thick) tokens.insert("thick");
  return tokens;
}

namespace {

const char* kDomainNames[] = {"geoms", "marks", "tiles", "glyphs", "motifs"};
const char* kTypeNames[] = {"box", "disk", "plus", "ring", "zigzag", "bars"};
constexpr int kNumFamilies = 6;
constexpr int kVisualAttributes = 4;  // bright, framed, shaded, thick

std::string domain_name(int d) {
  if (d < static_cast<int>(std::size(kDomainNames))) return kDomainNames[d];
  return "domain" + std::to_string(d);
}

std::string type_name(int global_index) {
  std::string base = kTypeNames[global_index % kNumFamilies];
  if (global_index >= kNumFamilies)
    base += std::to_string(global_index / kNumFamilies + 1);
  return base;
}

// Paints one shape family into a [s][s] grayscale canvas.
void render_shape(std::vector<double>& canvas, int s, int family, double fill,
                  bool thick, double cx, double cy, Rng& rng) {
  auto px = [&](int y, int x) -> double& {
    return canvas[static_cast<std::size_t>(y) * s + x];
  };
  const double unit = s / 32.0;
  switch (family) {
    case 0: {  // box
      const double half = (thick ? 9.5 : 5.5) * unit + rng.uniform(-1.0, 1.0) * unit;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          if (std::fabs(y - cy) <= half && std::fabs(x - cx) <= half)
            px(y, x) = fill;
      break;
    }
    case 1: {  // disk
      const double r = (thick ? 10.0 : 6.0) * unit + rng.uniform(-1.0, 1.0) * unit;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
            px(y, x) = fill;
      break;
    }
    case 2: {  // plus
      const double arm = 10.0 * unit + rng.uniform(-1.0, 1.0) * unit;
      const double w = (thick ? 3.5 : 1.5) * unit;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const bool vertical = std::fabs(x - cx) <= w && std::fabs(y - cy) <= arm;
          const bool horizontal = std::fabs(y - cy) <= w && std::fabs(x - cx) <= arm;
          if (vertical || horizontal) px(y, x) = fill;
        }
      break;
    }
    case 4: {  // zigzag: triangle wave across the full width
      const double amp = 6.0 * unit + rng.uniform(-1.0, 1.0) * unit;
      const double period = 12.0 * unit;
      const double w = (thick ? 3.0 : 1.4) * unit;
      const double phase = rng.uniform(0.0, period);
      for (int x = 0; x < s; ++x) {
        const double t = std::fmod(x + phase, period) / period;
        const double tri = t < 0.5 ? 4.0 * t - 1.0 : 3.0 - 4.0 * t;
        const double yline = cy + amp * tri;
        for (int y = 0; y < s; ++y)
          if (std::fabs(y - yline) <= w) px(y, x) = fill;
      }
      break;
    }
    case 3: {  // ring
      const double r = 9.0 * unit + rng.uniform(-1.0, 1.0) * unit;
      const double w = (thick ? 3.0 : 1.5) * unit;
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
          if (std::fabs(d - r) <= w) px(y, x) = fill;
        }
      break;
    }
    default: {  // bars: three horizontal bars
      const double w = (thick ? 2.5 : 1.2) * unit;
      const double gap = 7.0 * unit + rng.uniform(-0.5, 0.5) * unit;
      const double half = 10.0 * unit;
      for (int k = -1; k <= 1; ++k) {
        const double yline = cy + k * gap;
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            if (std::fabs(y - yline) <= w && std::fabs(x - cx) <= half)
              px(y, x) = fill;
      }
      break;
    }
  }
}

void write_pgm(const std::string& path, const std::vector<double>& canvas,
               int s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << s << " " << s << "\n255\n";
  for (double v : canvas) {
    const int q = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
    out.put(static_cast<char>(q));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

SynthResult synthesize_dataset(std::uint64_t seed, const SynthSpec& spec,
                               const std::string& out_dir) {
  if (spec.domains < 1 || spec.types_per_domain < 1 ||
      spec.images_per_type < 1 || spec.image_size < 8)
    throw std::invalid_argument(
        "synthesize_dataset: counts must be >= 1 and image_size >= 8");
  const int total_types = spec.domains * spec.types_per_domain;
  const int required_tokens = total_types + kVisualAttributes;
  if (spec.num_tokens != 0 && spec.num_tokens != required_tokens)
    throw std::invalid_argument(
        "synthesize_dataset: token count " + std::to_string(spec.num_tokens) +
        " cannot cover the " + std::to_string(required_tokens) +
        " distinguishable attributes (" + std::to_string(total_types) +
        " shape types + " + std::to_string(kVisualAttributes) +
        " visual attributes)");

  fs::create_directories(out_dir);
  Rng rng(seed);
  const int s = spec.image_size;

  SynthResult result;
  result.root_dir = out_dir;
  result.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  result.train_path = (fs::path(out_dir) / "train.txt").string();
  result.test_path = (fs::path(out_dir) / "test.txt").string();

  std::ofstream manifest(result.manifest_path, std::ios::binary);
  if (!manifest)
    throw std::runtime_error("cannot write manifest: " + result.manifest_path);
  manifest << "image_name,characteristics\n";

  std::vector<std::string> train_names, test_names;
  for (int d = 0; d < spec.domains; ++d) {
    const std::string domain = domain_name(d);
    for (int t = 0; t < spec.types_per_domain; ++t) {
      const int global_type = d * spec.types_per_domain + t;
      const std::string type = type_name(global_type);
      const fs::path dir = fs::path(out_dir) / "images" / domain / type;
      fs::create_directories(dir);

      std::vector<std::string> names;
      for (int i = 0; i < spec.images_per_type; ++i) {
        SynthSampleInfo info;
        info.domain = domain;
        info.type_name = type;
        info.vivid = rng.bernoulli(0.6);
        info.trimmed = rng.bernoulli(0.6);
        info.shaded = rng.bernoulli(0.6);
        info.thick = rng.bernoulli(0.6);

        char idx[16];
        std::snprintf(idx, sizeof idx, "%04d", i);
        const std::string file = domain + "_" + type + "_" + idx + ".pgm";
        info.image_name = "images/" + domain + "/" + type + "/" + file;

        // background, shading ramp, noise
        std::vector<double> canvas(static_cast<std::size_t>(s) * s);
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) {
            double v = 0.10 + rng.uniform(0.0, 0.03);
            if (info.shaded) v += 0.30 * x / (s - 1);
            canvas[static_cast<std::size_t>(y) * s + x] = v;
          }

        const double fill = info.vivid ? rng.uniform(0.85, 0.97)
                                       : rng.uniform(0.45, 0.60);
        const double cx = s / 2.0 + rng.uniform(-3.0, 3.0) * s / 32.0;
        const double cy = s / 2.0 + rng.uniform(-3.0, 3.0) * s / 32.0;
        render_shape(canvas, s, global_type % kNumFamilies, fill, info.thick,
                     cx, cy, rng);

        if (info.trimmed) {
          const int bw = std::max(1, s / 16);
          for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
              if (y < bw || y >= s - bw || x < bw || x >= s - bw)
                canvas[static_cast<std::size_t>(y) * s + x] = 0.75;
        }

        write_pgm((dir / file).string(), canvas, s);

        std::string cell;
        for (const std::string& tok : synth_tokens_for(info)) {
          if (!cell.empty()) cell += "; ";
          cell += tok;
        }
        manifest << info.image_name << "," << cell << "\n";
        names.push_back(info.image_name);
        result.truth.push_back(std::move(info));
      }

      // stratified 80/20 split within each type
      std::vector<int> order(names.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      rng.shuffle(order);
      const int n_test = std::max(
          1, static_cast<int>(std::lround(0.2 * static_cast<double>(names.size()))));
      for (std::size_t i = 0; i < order.size(); ++i)
        (static_cast<int>(i) < n_test ? test_names : train_names)
            .push_back(names[static_cast<std::size_t>(order[i])]);
    }
  }
  manifest.close();
  if (!manifest) throw std::runtime_error("write failed: " + result.manifest_path);

  auto write_split = [](const std::string& path, std::vector<std::string> names) {
    std::sort(names.begin(), names.end());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write split: " + path);
    for (const std::string& n : names) out << n << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
  };
  write_split(result.train_path, train_names);
  write_split(result.test_path, test_names);

  result.manifest = load_manifest(result.manifest_path);
  result.split = load_split(result.train_path, result.test_path, result.manifest);

  std::sort(result.truth.begin(), result.truth.end(),
            [](const SynthSampleInfo& a, const SynthSampleInfo& b) {
              return a.image_name < b.image_name;
            });
  return result;
}

}  // namespace varcaps
