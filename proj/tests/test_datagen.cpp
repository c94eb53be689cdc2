#include "doctest.h"
#include "test_support.hpp"

#include "advgnn/datagen.hpp"
#include "advgnn/error.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

using namespace advgnn;

namespace {

SearchConfig quick_search() {
  SearchConfig cfg;
  cfg.restarts = 2;
  cfg.steps = 300;
  cfg.lr = 0.05;
  return cfg;
}

// Single affine layer on the box [-10, 10]^d.
Network linear_net(Rng& rng, Index d, Index m) {
  std::normal_distribution<double> g(0.0, 1.0);
  Layer l{Matrix::NullaryExpr(m, d, [&] { return g(rng); }), Vector::NullaryExpr(m, [&] { return 0.3 * g(rng); })};
  return Network({l}, Vector::Constant(d, -10.0), Vector::Constant(d, 10.0));
}

// Class 0 wins on [0, 0.2]^2; the other classes are reachable by moving x up.
Network class_zero_net() {
  Matrix w(4, 2);
  w << 0, 0, 1, 0, 0, 1, 1, 1;
  Vector b(4);
  b << 0.5, 0, 0, -0.5;
  return Network({Layer{w, b}});
}

std::vector<LabeledImage> class_zero_images(Rng& rng, int n) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) out.push_back({testing::uniform_vector(rng, 2, 0.0, 0.2), 0});
  return out;
}

}  // namespace

TEST_CASE("linear nets: bisection finds the analytic minimal epsilon") {
  Rng rng = make_rng(1);
  int done = 0;
  while (done < 20) {
    const Network net = linear_net(rng, 4, 3);
    const Vector x = testing::uniform_vector(rng, 4, -1.0, 1.0);
    const Index y = testing::argmax(logits(net, x));
    const Index t = (y + 1) % 3;
    const Vector f = logits(net, x);
    const double l1 = (net.layer(0).weight.row(t) - net.layer(0).weight.row(y)).lpNorm<1>();
    const double exact = (f[y] - f[t]) / l1;
    if (exact > 8.0) continue;  // the optimal corner would leave the box
    const SearchResult r = binary_search_epsilon(net, x, y, t, quick_search());
    CHECK_FALSE(r.trivial);
    CHECK(std::abs(r.epsilon - exact) <= 1e-3);
    CHECK(r.hi - r.lo <= 1e-3);
    CHECK(r.lo <= exact);
    CHECK(PerturbationBall::around(net, x, r.epsilon).contains(r.point));
    CHECK(adversarial_loss(net, r.point, y, t) >= 0.0);
    ++done;
  }
}

TEST_CASE("bracket bookkeeping on random relu nets") {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Network net = testing::random_network(rng, {3, 8, 3});
    const auto prop = testing::random_property(net, rng, 0.0);
    SearchConfig cfg = quick_search();
    cfg.eta = 1e-2;
    SearchResult r;
    try {
      r = binary_search_epsilon(net, prop.ball.center(), prop.y, prop.y_tar, cfg);
    } catch (const Error&) {
      continue;  // target unreachable inside the box
    }
    CHECK(r.hi - r.lo <= cfg.eta);
    CHECK(r.epsilon == r.hi);
    CHECK(adversarial_loss(net, r.point, prop.y, prop.y_tar) >= 0.0);
    CHECK(PerturbationBall::around(net, prop.ball.center(), r.hi).contains(r.point));
  }
}

TEST_CASE("search errors and the trivial case") {
  Matrix w(2, 1);
  w << 0.0, 1.0;
  const Network net({Layer{w, Vector::Zero(2)}}, Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  // L(x) = x
  SUBCASE("target already winning") {
    const SearchResult r = binary_search_epsilon(net, Vector::Constant(1, 0.5), 0, 1, quick_search());
    CHECK(r.trivial);
    CHECK(r.epsilon == 0.0);
    CHECK(r.hi == r.lo);
  }
  SUBCASE("bracket too small") {
    SearchConfig cfg = quick_search();
    cfg.eps_hi = 0.1;
    try {
      binary_search_epsilon(net, Vector::Constant(1, -0.5), 0, 1, cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("bracket too small") != std::string::npos);
    }
  }
  SUBCASE("not a valid property") {
    // three classes: prediction 2, true label 0, target 1 still losing
    Matrix w3(3, 1);
    w3 << 0.0, -1.0, 1.0;
    const Network net3({Layer{w3, Vector::Zero(3)}}, Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
    try {
      binary_search_epsilon(net3, Vector::Constant(1, 0.5), 0, 1, quick_search());
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("not a valid property") != std::string::npos);
    }
  }
  SUBCASE("configuration") {
    SearchConfig cfg = quick_search();
    cfg.eta = 0.0;
    CHECK_THROWS_AS(binary_search_epsilon(net, Vector::Constant(1, -0.5), 0, 1, cfg), ConfigError);
    CHECK_THROWS_AS(binary_search_epsilon(net, Vector::Zero(2), 0, 1, quick_search()), ShapeError);
  }
  SUBCASE("default bracket reaches the far box corner") {
    const SearchResult r = binary_search_epsilon(net, Vector::Constant(1, -0.5), 0, 1, quick_search());
    CHECK(r.epsilon == doctest::Approx(0.5).epsilon(2e-3));
  }
}

TEST_CASE("dataset generation") {
  Rng rng = make_rng(3);
  const Network net = class_zero_net();
  auto images = class_zero_images(rng, 12);
  images.insert(images.begin() + 2, LabeledImage{Vector::Constant(2, 0.1), 1});  // misclassified
  const SearchConfig cfg = quick_search();
  const auto a = generate_dataset(net, images, 10, cfg, 42);
  REQUIRE(a.size() == 10);
  for (const auto& rec : a) {
    CHECK(rec.y == 0);
    CHECK(rec.y_tar >= 1);
    CHECK(rec.y_tar <= 3);
    CHECK(rec.epsilon > 0.0);
    CHECK(rec.provenance.restarts == cfg.restarts);
    CHECK(replay(net, rec));
  }
  CHECK(a[2].x == images[3].x);  // the misclassified image was skipped

  const auto b = generate_dataset(net, images, 10, cfg, 42);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(record_to_json(a[i]) == record_to_json(b[i]));
  }
  CHECK_THROWS_AS(generate_dataset(net, images, 50, cfg, 42), Error);
}

TEST_CASE("easy variant") {
  PropertyRecord rec;
  rec.x = Vector::Constant(2, 0.1);
  rec.epsilon = 0.030;
  const auto same = easy_variant({rec}, 0.0);
  CHECK(same[0].epsilon == rec.epsilon);
  const auto easy = easy_variant({rec});
  CHECK(easy[0].epsilon == doctest::Approx(0.031));
  CHECK(easy[0].provenance.delta == doctest::Approx(0.001));
  CHECK_THROWS_AS(easy_variant({rec}, -1.0), ConfigError);

  // the original adversarial point stays feasible, and replay still holds
  Rng rng = make_rng(4);
  const Network net = class_zero_net();
  const auto data = generate_dataset(net, class_zero_images(rng, 4), 3, quick_search(), 7);
  const auto shifted = easy_variant(data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SearchResult found = binary_search_epsilon(net, data[i].x, data[i].y, data[i].y_tar, [&] {
      SearchConfig c = quick_search();
      c.seed = data[i].provenance.seed;
      return c;
    }());
    CHECK(to_property(net, shifted[i]).ball.contains(found.point));
    CHECK(replay(net, shifted[i]));
  }
}

TEST_CASE("record and image files") {
  Rng rng = make_rng(5);
  const Network net = class_zero_net();
  const auto data = generate_dataset(net, class_zero_images(rng, 4), 3, quick_search(), 9);
  const auto dir = std::filesystem::temp_directory_path() / "advgnn_datagen_test";
  std::filesystem::create_directories(dir);

  save_dataset(data, dir / "props.jsonl");
  const auto back = load_dataset(dir / "props.jsonl");
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].x == data[i].x);
    CHECK(back[i].epsilon == data[i].epsilon);
    CHECK(back[i].provenance.seed == data[i].provenance.seed);
    CHECK(record_to_json(back[i]) == record_to_json(data[i]));
  }

  {
    std::ofstream out(dir / "images.json");
    out << R"([{"x": [0.1, 0.1], "label": 0}, {"x": [0.0, 0.2], "y": 0}])";
  }
  {
    std::ofstream out(dir / "images.jsonl");
    out << "{\"x\": [0.1, 0.1], \"label\": 0}\n\n{\"x\": [0.0, 0.2], \"label\": 0}\n";
  }
  const auto arr = load_images(dir / "images.json");
  const auto lines = load_images(dir / "images.jsonl");
  REQUIRE(arr.size() == 2);
  REQUIRE(lines.size() == 2);
  CHECK(arr[1].x == lines[1].x);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"x\": [0.1, 0.1]}\n";
  }
  CHECK_THROWS_AS(load_images(dir / "bad.jsonl"), FormatError);

  nlohmann::json doc = record_to_json(data[0]);
  doc.erase("y_tar");
  CHECK_THROWS_AS(record_from_json(doc, "r"), FormatError);
  doc = record_to_json(data[0]);
  doc["epsilon"] = 0.0;
  CHECK_THROWS_AS(record_from_json(doc, "r"), FormatError);

  {
    std::ofstream out(dir / "prop.json");
    out << R"({"x": [0.1, 0.1], "y": 0, "y_tar": 2, "epsilon": 0.05})";
  }
  const AttackProperty prop = load_property(net, dir / "prop.json");
  CHECK(prop.y_tar == 2);
  CHECK(prop.ball.epsilon() == 0.05);
  const TrainingSample s = to_training_sample(data[0]);
  CHECK(s.epsilon == data[0].epsilon);
  std::filesystem::remove_all(dir);
}
