#include "doctest.h"

#include "varcaps/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace varcaps;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "varcaps_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("parse_characteristics") {
  auto t1 = parse_characteristics("Brown; Four Legs");
  CHECK(t1 == std::set<std::string>{"brown", "four legs"});
  auto t2 = parse_characteristics("wings, beak, wings");
  CHECK(t2 == std::set<std::string>{"beak", "wings"});
  CHECK_THROWS_AS(parse_characteristics(";;"), std::runtime_error);
  CHECK_THROWS_AS(parse_characteristics("   "), std::runtime_error);
}

TEST_CASE("load_manifest") {
  fs::path dir = scratch_dir("manifest");

  SUBCASE("two rows parse into two sorted records") {
    write_file(dir / "m.csv",
               "image_name,characteristics\n"
               "images/geoms/box/b.pgm,Brown; Four Legs\n"
               "images/birds/owl/a.pgm,\"wings, beak\"\n");
    DatasetManifest m = load_manifest((dir / "m.csv").string());
    REQUIRE(m.samples.size() == 2);
    CHECK(m.samples[0].image_name == "images/birds/owl/a.pgm");
    CHECK(m.samples[0].characteristics == std::set<std::string>{"beak", "wings"});
    CHECK(m.samples[0].domain == "birds");
    CHECK(m.samples[0].type_name == "owl");
    CHECK(m.samples[1].characteristics ==
          std::set<std::string>{"brown", "four legs"});
  }
  SUBCASE("duplicate image name is rejected with the name") {
    write_file(dir / "dup.csv",
               "image_name,characteristics\na.pgm,x\na.pgm,y\n");
    CHECK_THROWS_WITH_AS(load_manifest((dir / "dup.csv").string()),
                         doctest::Contains("duplicate image name 'a.pgm'"),
                         std::runtime_error);
  }
  SUBCASE("wrong column count carries the row number") {
    write_file(dir / "cols.csv",
               "image_name,characteristics\na.pgm,x\nb.pgm,y,z\n");
    CHECK_THROWS_WITH_AS(load_manifest((dir / "cols.csv").string()),
                         doctest::Contains("row 3"), std::runtime_error);
  }
  SUBCASE("empty characteristics cell carries the row number") {
    write_file(dir / "empty.csv", "image_name,characteristics\na.pgm,\n");
    CHECK_THROWS_WITH_AS(load_manifest((dir / "empty.csv").string()),
                         doctest::Contains("row 2"), std::runtime_error);
  }
  SUBCASE("missing file and bad header are errors") {
    CHECK_THROWS_AS(load_manifest((dir / "nope.csv").string()),
                    std::runtime_error);
    write_file(dir / "hdr.csv", "name,stuff\na.pgm,x\n");
    CHECK_THROWS_AS(load_manifest((dir / "hdr.csv").string()),
                    std::runtime_error);
  }
  SUBCASE("loading is pure: shuffled rows give identical records") {
    write_file(dir / "o1.csv",
               "image_name,characteristics\na.pgm,x\nb.pgm,y\nc.pgm,z\n");
    write_file(dir / "o2.csv",
               "image_name,characteristics\nc.pgm,z\na.pgm,x\nb.pgm,y\n");
    DatasetManifest m1 = load_manifest((dir / "o1.csv").string());
    DatasetManifest m2 = load_manifest((dir / "o2.csv").string());
    REQUIRE(m1.samples.size() == m2.samples.size());
    for (std::size_t i = 0; i < m1.samples.size(); ++i) {
      CHECK(m1.samples[i].image_name == m2.samples[i].image_name);
      CHECK(m1.samples[i].characteristics == m2.samples[i].characteristics);
    }
  }
}

TEST_CASE("full-dataset layout fixture") {
  fs::path dir = scratch_dir("full");
  std::ostringstream manifest;
  std::ostringstream train, test;
  manifest << "image_name,characteristics\n";
  int k = 0;
  for (int d = 0; d < 3; ++d)
    for (int t = 0; t < 5; ++t)
      for (int i = 0; i < 200; ++i, ++k) {
        std::string name = "d" + std::to_string(d) + "/t" + std::to_string(t) +
                           "/img" + std::to_string(i) + ".jpg";
        manifest << name << ",tok" << (k % 7) << "\n";
        // last 40 of each type go to test: 15 types x 40 = 600
        (i < 160 ? train : test) << name << "\n";
      }
  write_file(dir / "manifest.csv", manifest.str());
  write_file(dir / "train.txt", train.str());
  write_file(dir / "test.txt", test.str());

  ManifestOptions opts;
  opts.expect_full_dataset = true;
  DatasetManifest m = load_manifest((dir / "manifest.csv").string(), opts);
  CHECK(m.samples.size() == 3000);

  SplitSpec split = load_split((dir / "train.txt").string(),
                               (dir / "test.txt").string(), m, true);
  CHECK(split.train_names.size() == 2400);
  CHECK(split.test_names.size() == 600);

  SUBCASE("wrong split sizes are rejected when the real layout is expected") {
    std::string short_train = train.str();
    short_train = short_train.substr(0, short_train.find('\n') + 1);
    write_file(dir / "short.txt", short_train);
    CHECK_THROWS_WITH_AS(load_split((dir / "short.txt").string(),
                                    (dir / "test.txt").string(), m, true),
                         doctest::Contains("2400/600"), std::runtime_error);
  }
  SUBCASE("a partial manifest is rejected when the full layout is expected") {
    write_file(dir / "partial.csv", "image_name,characteristics\na.jpg,x\n");
    CHECK_THROWS_AS(load_manifest((dir / "partial.csv").string(), opts),
                    std::runtime_error);
  }
}

TEST_CASE("load_split error paths") {
  fs::path dir = scratch_dir("split");
  write_file(dir / "m.csv", "image_name,characteristics\na.pgm,x\nb.pgm,y\n");
  DatasetManifest m = load_manifest((dir / "m.csv").string());

  write_file(dir / "train.txt", "a.pgm\n");
  write_file(dir / "test.txt", "b.pgm\n");
  SplitSpec ok = load_split((dir / "train.txt").string(),
                            (dir / "test.txt").string(), m);
  CHECK(ok.train_names == std::set<std::string>{"a.pgm"});
  CHECK(ok.test_names == std::set<std::string>{"b.pgm"});

  write_file(dir / "overlap.txt", "a.pgm\n");
  CHECK_THROWS_WITH_AS(load_split((dir / "train.txt").string(),
                                  (dir / "overlap.txt").string(), m),
                       doctest::Contains("a.pgm"), std::runtime_error);

  write_file(dir / "unknown.txt", "zzz.pgm\n");
  CHECK_THROWS_WITH_AS(load_split((dir / "unknown.txt").string(),
                                  (dir / "test.txt").string(), m),
                       doctest::Contains("zzz.pgm"), std::runtime_error);

  write_file(dir / "empty.txt", "");
  CHECK_THROWS_AS(load_split((dir / "empty.txt").string(),
                             (dir / "test.txt").string(), m),
                  std::runtime_error);
}

TEST_CASE("load_image") {
  fs::path dir = scratch_dir("images");

  SUBCASE("ascii pgm scales by maxval") {
    write_file(dir / "a.pgm", "P2\n2 2\n255\n0 85 170 255\n");
    Tensor t = load_image((dir / "a.pgm").string(), 2, 2);
    CHECK(t.shape() == Shape{2, 2, 1});
    CHECK(t.at({0, 0, 0}) == 0.0);
    CHECK(t.at({0, 1, 0}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(t.at({1, 0, 0}) == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(t.at({1, 1, 0}) == 1.0);
  }
  SUBCASE("binary pgm matches ascii") {
    write_file(dir / "b.pgm", std::string("P5\n2 2\n255\n") +
                                  std::string("\x00\x55\xaa\xff", 4));
    Tensor t = load_image((dir / "b.pgm").string(), 2, 2);
    CHECK(t.at({0, 1, 0}) == doctest::Approx(85.0 / 255).epsilon(1e-12));
    CHECK(t.at({1, 1, 0}) == 1.0);
  }
  SUBCASE("nearest-neighbor upscale replicates pixels") {
    write_file(dir / "c.pgm", "P2\n2 2\n255\n0 255 255 0\n");
    Tensor t = load_image((dir / "c.pgm").string(), 4, 4);
    CHECK(t.at({0, 0, 0}) == 0.0);
    CHECK(t.at({0, 1, 0}) == 0.0);
    CHECK(t.at({0, 2, 0}) == 1.0);
    CHECK(t.at({3, 0, 0}) == 1.0);
    CHECK(t.at({3, 3, 0}) == 0.0);
  }
  SUBCASE("ppm collapses to luminance when grayscale is on") {
    write_file(dir / "d.ppm", "P3\n1 1\n255\n255 0 0\n");
    Tensor t = load_image((dir / "d.ppm").string(), 1, 1);
    CHECK(t.shape() == Shape{1, 1, 1});
    CHECK(t.at({0, 0, 0}) == doctest::Approx(0.299).epsilon(1e-12));
    ImageOptions color;
    color.grayscale = false;
    Tensor rgb = load_image((dir / "d.ppm").string(), 1, 1, color);
    CHECK(rgb.shape() == Shape{1, 1, 3});
  }
  SUBCASE("mdic raw floats round-trip bit-exactly") {
    std::string payload("MDIC", 4);
    auto put_u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) payload += static_cast<char>((v >> (8 * i)) & 0xff);
    };
    put_u32(1);
    put_u32(2);
    put_u32(1);
    const float vals[2] = {0.25f, 0.875f};
    for (float f : vals) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(u);
    }
    write_file(dir / "e.mdic", payload);
    Tensor t = load_image((dir / "e.mdic").string(), 1, 2);
    CHECK(t.at({0, 0, 0}) == 0.25);
    CHECK(t.at({0, 1, 0}) == 0.875);
  }
  SUBCASE("truncated and unsupported files are errors") {
    write_file(dir / "t.pgm", "P5\n4 4\n255\nxx");
    CHECK_THROWS_WITH_AS(load_image((dir / "t.pgm").string(), 4, 4),
                         doctest::Contains("truncated"), std::runtime_error);
    write_file(dir / "u.bin", "XY01234");
    CHECK_THROWS_WITH_AS(load_image((dir / "u.bin").string(), 4, 4),
                         doctest::Contains("magic"), std::runtime_error);
  }
}

TEST_CASE("synthesize_dataset") {
  SynthSpec spec;  // 2 domains x 2 types x 32 images, 32x32

  SUBCASE("deterministic bytes for a fixed seed") {
    fs::path d1 = scratch_dir("synth1"), d2 = scratch_dir("synth2");
    SynthResult r1 = synthesize_dataset(7, spec, d1.string());
    SynthResult r2 = synthesize_dataset(7, spec, d2.string());
    CHECK(read_file(r1.manifest_path) == read_file(r2.manifest_path));
    CHECK(read_file(r1.train_path) == read_file(r2.train_path));
    CHECK(read_file(r1.test_path) == read_file(r2.test_path));
    REQUIRE(!r1.manifest.samples.empty());
    const std::string img = r1.manifest.samples[0].image_name;
    CHECK(read_file(d1 / img) == read_file(d2 / img));
    CHECK(!read_file(d1 / img).empty());
  }
  SUBCASE("cardinality, split arithmetic and coverage") {
    fs::path dir = scratch_dir("synth3");
    SynthResult r = synthesize_dataset(11, spec, dir.string());
    CHECK(r.manifest.samples.size() == 128);
    // stratified 80/20: round(0.2 * 32) = 6 test images per type
    CHECK(r.split.test_names.size() == 24);
    CHECK(r.split.train_names.size() == 104);

    std::set<std::string> train_tokens;
    for (const SampleRecord& s : r.manifest.samples)
      if (r.split.train_names.count(s.image_name))
        for (const std::string& tok : s.characteristics)
          train_tokens.insert(tok);
    std::set<std::string> all_tokens;
    for (const SampleRecord& s : r.manifest.samples)
      for (const std::string& tok : s.characteristics) all_tokens.insert(tok);
    CHECK(all_tokens.size() == 8);  // 4 types + 4 visual attributes
    CHECK(train_tokens == all_tokens);
  }
  SUBCASE("manifest tokens equal the generator's attribute flags") {
    fs::path dir = scratch_dir("synth4");
    SynthResult r = synthesize_dataset(13, spec, dir.string());
    REQUIRE(r.truth.size() == r.manifest.samples.size());
    for (std::size_t i = 0; i < r.truth.size(); ++i) {
      CHECK(r.truth[i].image_name == r.manifest.samples[i].image_name);
      CHECK(synth_tokens_for(r.truth[i]) == r.manifest.samples[i].characteristics);
    }
  }
  SUBCASE("mismatched token budget is rejected") {
    SynthSpec bad = spec;
    bad.num_tokens = 7;
    CHECK_THROWS_WITH_AS(synthesize_dataset(1, bad, scratch_dir("synth5").string()),
                         doctest::Contains("distinguishable"),
                         std::invalid_argument);
    bad.num_tokens = 8;  // exact requirement is accepted
    CHECK_NOTHROW(synthesize_dataset(1, bad, scratch_dir("synth6").string()));
  }
}

TEST_SUITE_END();
