#include "doctest.h"

#include "varcaps/decoder.hpp"
#include "varcaps/grad_check.hpp"
#include "varcaps/ops.hpp"
#include "varcaps/rng.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace varcaps;
namespace fs = std::filesystem;

namespace {

DatasetManifest make_manifest(std::vector<std::pair<std::string, std::string>> rows) {
  DatasetManifest m;
  for (auto& [name, cell] : rows) {
    SampleRecord rec;
    rec.image_name = name;
    rec.characteristics = parse_characteristics(cell);
    m.samples.push_back(std::move(rec));
  }
  return m;
}

DecoderParams random_params(const HierarchyTopology& topo, Rng& rng,
                            double scl = 1.0) {
  DecoderParams p;
  for (std::size_t l = 0; l + 1 < topo.layers.size(); ++l) {
    const int n = topo.layers[l + 1];
    std::vector<double> w(static_cast<std::size_t>(n)), b(w.size());
    for (double& x : w) x = rng.uniform(-scl, scl);
    for (double& x : b) x = rng.uniform(-scl, scl);
    p.weights.push_back(Tensor({n}, w));
    p.biases.push_back(Tensor({n}, b));
  }
  return p;
}

Tensor random_latent(int n, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor({n}, v);
}

}  // namespace

TEST_SUITE_BEGIN("decoder");

TEST_CASE("build_vocabulary") {
  SUBCASE("union, normalization and lexicographic order") {
    auto m = make_manifest({{"a", "brown; four legs"}, {"b", "Brown; wings"}});
    CharacteristicVocabulary v = build_vocabulary(m);
    CHECK(v.tokens == std::vector<std::string>{"brown", "four legs", "wings"});
    CHECK(v.lookup("wings") == 2);
    CHECK(v.lookup("feathers") == -1);
  }
  SUBCASE("single token") {
    CHECK(build_vocabulary(make_manifest({{"a", "beak"}})).size() == 1);
  }
  SUBCASE("duplicates collapse") {
    auto m = make_manifest({{"a", "x; y"}, {"b", "y; x"}});
    CHECK(build_vocabulary(m).size() == 2);
  }
  SUBCASE("row order cannot matter") {
    auto m1 = make_manifest({{"a", "x"}, {"b", "y"}, {"c", "z"}});
    auto m2 = make_manifest({{"c", "z"}, {"b", "y"}, {"a", "x"}});
    CHECK(build_vocabulary(m1).tokens == build_vocabulary(m2).tokens);
  }
  SUBCASE("empty manifest and blank characteristics are errors") {
    CHECK_THROWS_AS(build_vocabulary(DatasetManifest{}), std::invalid_argument);
    DatasetManifest m;
    SampleRecord rec;
    rec.image_name = "broken.pgm";
    m.samples.push_back(rec);
    CHECK_THROWS_WITH_AS(build_vocabulary(m), doctest::Contains("broken.pgm"),
                         std::invalid_argument);
  }
}

TEST_CASE("vocabulary file round trip is bit-exact") {
  fs::path dir = fs::temp_directory_path() / "varcaps_tests" / "vocab";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CharacteristicVocabulary v =
      CharacteristicVocabulary::from_tokens({"wings", "beak", "brown"});
  const std::string path = (dir / "vocab.txt").string();
  save_vocabulary(v, path);

  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "beak\nbrown\nwings\n");

  CharacteristicVocabulary back = load_vocabulary(path);
  CHECK(back.tokens == v.tokens);

  std::ofstream bad((dir / "bad.txt").string(), std::ios::binary);
  bad << "z\na\n";
  bad.close();
  CHECK_THROWS_AS(load_vocabulary((dir / "bad.txt").string()),
                  std::runtime_error);
}

TEST_CASE("build_topology") {
  SUBCASE("num_roots == vocab gives a depth-1 bijection") {
    HierarchyTopology t = build_topology(5, 5, {});
    CHECK(t.layers == std::vector<int>{5, 5});
    for (int leaf = 0; leaf < 5; ++leaf) CHECK(t.leaf_root(leaf) == leaf);
  }
  SUBCASE("4 roots, hidden 8, 10 leaves: round-robin arithmetic") {
    HierarchyTopology t = build_topology(4, 10, {8});
    std::vector<int> hidden_children(8, 0), root_children(4, 0);
    for (int leaf = 0; leaf < 10; ++leaf)
      ++hidden_children[static_cast<std::size_t>(t.parent_of[1][leaf])];
    for (int h = 0; h < 8; ++h)
      ++root_children[static_cast<std::size_t>(t.parent_of[0][h])];
    for (int n : hidden_children) CHECK((n == 1 || n == 2));
    for (int n : root_children) CHECK(n == 2);
  }
  SUBCASE("every leaf reaches exactly one root on a large tree") {
    HierarchyTopology t = build_topology(240, 37, {64});
    for (int leaf = 0; leaf < 37; ++leaf) {
      std::vector<int> chain = t.leaf_chain(leaf);
      CHECK(chain.size() == 3);
      CHECK(chain.front() >= 0);
      CHECK(chain.front() < 240);
      CHECK(chain.back() == leaf);
    }
  }
  SUBCASE("invalid shapes are rejected") {
    CHECK_THROWS_AS(build_topology(0, 5, {}), std::invalid_argument);
    CHECK_THROWS_AS(build_topology(5, 0, {}), std::invalid_argument);
    CHECK_THROWS_AS(build_topology(5, 5, {0}), std::invalid_argument);
    HierarchyTopology broken = build_topology(4, 4, {4});
    broken.parent_of[0][2] = 9;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
  }
}

TEST_CASE("decode") {
  SUBCASE("zero parameters give probability one half everywhere") {
    HierarchyTopology t = build_topology(6, 4, {5});
    DecoderParams p;
    p.weights = {Tensor::zeros({5}), Tensor::zeros({4})};
    p.biases = {Tensor::zeros({5}), Tensor::zeros({4})};
    Tensor probs = decode(Tensor::zeros({6}), t, p);
    for (int i = 0; i < 4; ++i) CHECK(probs.at({i}) == 0.5);
  }
  SUBCASE("accepts the [K,d] latent layout") {
    Rng rng(3);
    HierarchyTopology t = build_topology(6, 4, {5});
    DecoderParams p = random_params(t, rng);
    Tensor flat = random_latent(6, rng);
    Tensor shaped = reshape(flat, {2, 3});
    Tensor p1 = decode(flat, t, p), p2 = decode(shaped, t, p);
    for (int i = 0; i < 4; ++i) CHECK(p1.at({i}) == p2.at({i}));
    CHECK_THROWS_AS(decode(Tensor::zeros({7}), t, p), std::invalid_argument);
  }
  SUBCASE("outputs stay strictly inside (0,1)") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      HierarchyTopology t = build_topology(rng.uniform_int(1, 12),
                                           rng.uniform_int(1, 9),
                                           {rng.uniform_int(1, 10)});
      DecoderParams p = random_params(t, rng, 4.0);
      Tensor probs = decode(random_latent(t.num_roots(), rng), t, p);
      CHECK((probs.array() > 0.0).all());
      CHECK((probs.array() < 1.0).all());
    }
  }
  SUBCASE("perturbing a non-ancestor coordinate leaves a leaf bitwise unchanged") {
    Rng rng(7);
    HierarchyTopology t = build_topology(8, 6, {6});
    DecoderParams p = random_params(t, rng);
    Tensor latent = random_latent(8, rng);
    Tensor base = decode(latent, t, p);
    for (int leaf = 0; leaf < 6; ++leaf) {
      const int root = t.leaf_root(leaf);
      for (int coord = 0; coord < 8; ++coord) {
        if (coord == root) continue;
        Array bumped = latent.array();
        bumped[coord] += 0.737;
        Tensor probs = decode(Tensor({8}, bumped), t, p);
        CHECK(probs.at({leaf}) == base.at({leaf}));
      }
    }
  }
  SUBCASE("deterministic output for fixed params and latent") {
    Rng rng(9);
    HierarchyTopology t = build_topology(10, 7, {7});
    DecoderParams p = random_params(t, rng);
    Tensor latent = random_latent(10, rng);
    Tensor a = decode(latent, t, p), b = decode(latent, t, p);
    for (int i = 0; i < 7; ++i) CHECK(a.at({i}) == b.at({i}));
  }
}

TEST_CASE("leaf gradients flow only along the ancestor chain") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int roots = rng.uniform_int(2, 10);
    const int v = rng.uniform_int(1, 6);
    HierarchyTopology t = build_topology(roots, v, {rng.uniform_int(1, 8)});
    DecoderParams p = random_params(t, rng);
    const int leaf = rng.uniform_int(0, v - 1);
    const int root = t.leaf_root(leaf);
    Tensor latent = random_latent(roots, rng);

    // analytic gradient
    Tape tape;
    Tensor x = tape.leaf(latent);
    std::vector<double> pick(static_cast<std::size_t>(v), 0.0);
    pick[static_cast<std::size_t>(leaf)] = 1.0;
    tape.backward(sum(mul(decode(x, t, p), Tensor({v}, pick))));
    for (int coord = 0; coord < roots; ++coord) {
      if (coord == root)
        CHECK(x.grad()[coord] != 0.0);
      else
        CHECK(x.grad()[coord] == 0.0);
    }

    // finite differences agree
    auto f = [&](Tape&, const Tensor& probe) {
      return sum(mul(decode(probe, t, p), Tensor({v}, pick)));
    };
    CHECK(grad_check(f, latent).max_rel_error < 1e-4);
  }
}

TEST_CASE("threshold_multihot") {
  Tensor probs({2}, std::vector<double>{0.9, 0.1});
  Tensor hot = threshold_multihot(probs, 0.5);
  CHECK(hot.at({0}) == 1.0);
  CHECK(hot.at({1}) == 0.0);

  Tensor low = threshold_multihot(Tensor({3}, std::vector<double>{0.1, 0.2, 0.3}), 0.5);
  CHECK(low.array().abs().maxCoeff() == 0.0);

  // boundary inclusive
  Tensor edge = threshold_multihot(Tensor({1}, std::vector<double>{0.5}), 0.5);
  CHECK(edge.at({0}) == 1.0);

  CHECK_THROWS_AS(threshold_multihot(probs, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(threshold_multihot(probs, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(threshold_multihot(Tensor({1}, std::vector<double>{1.0}), 0.5),
                  std::domain_error);
}

TEST_SUITE_END();
