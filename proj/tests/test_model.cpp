#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "scattnet/errors.hpp"
#include "scattnet/model.hpp"
#include "scattnet/train.hpp"

using namespace scattnet;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(AttentionMode mode = AttentionMode::Cascade) {
  ModelConfig c;
  c.in_channels = 3;
  c.num_classes = 2;
  c.encoder_widths = {8};
  c.attention = mode;
  c.seed = 42;
  return c;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("scattnet_model_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = tiny_config();
  c.encoder_widths.clear();
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = tiny_config();
  c.encoder_widths = {12};  // not divisible by 8 with attention on
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.attention = AttentionMode::None;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("build_model determinism and parameter accounting") {
  SUBCASE("same config+seed twice is bit-identical") {
    Model a = Model::build(tiny_config());
    Model b = Model::build(tiny_config());
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      CHECK(a.params()[i].first == b.params()[i].first);
      CHECK(a.params()[i].second.vec() == b.params()[i].second.vec());
    }
  }
  SUBCASE("attention adds exactly C*C/4 + 98 parameters") {
    for (int c : {8, 16, 32}) {
      ModelConfig none = tiny_config(AttentionMode::None);
      none.encoder_widths = {c, 2 * c};
      ModelConfig cascade = none;
      cascade.attention = AttentionMode::Cascade;
      const long delta = Model::build(cascade).total_param_count() -
                         Model::build(none).total_param_count();
      CHECK(delta == static_cast<long>(c) * c / 4 + 98);
    }
  }
  SUBCASE("backbone init is shared across attention modes") {
    Model none = Model::build(tiny_config(AttentionMode::None));
    Model casc = Model::build(tiny_config(AttentionMode::Cascade));
    CHECK(none.param("enc0.w").vec() == casc.param("enc0.w").vec());
    CHECK(none.param("head.w").vec() == casc.param("head.w").vec());
  }
}

TEST_CASE("forward shape contract") {
  ModelConfig c = tiny_config();
  c.encoder_widths = {16};
  Model m = Model::build(c);
  std::mt19937_64 rng(1);
  Tensor logits = m.forward_eval(oracles::random_tensor({1, 3, 32, 32}, rng));
  CHECK(logits.shape() == std::vector<int>{1, 2, 32, 32});

  // non-divisible input instructs the caller to pad
  CHECK_THROWS_WITH_AS(m.forward_eval(oracles::random_tensor({1, 3, 31, 32}, rng)),
                       doctest::Contains("pad"), ContractError);
}

TEST_CASE("forward purity and per-sample independence") {
  Model m = Model::build(tiny_config());
  std::mt19937_64 rng(2);
  Tensor one = oracles::random_tensor({1, 3, 16, 16}, rng);
  Tensor two({2, 3, 16, 16});
  std::copy(one.vec().begin(), one.vec().end(), two.vec().begin());
  std::copy(one.vec().begin(), one.vec().end(),
            two.vec().begin() + static_cast<std::ptrdiff_t>(one.numel()));
  Tensor la = m.forward_eval(two);
  Tensor lb = m.forward_eval(two);
  CHECK(la.vec() == lb.vec());  // eval is pure
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        CHECK(la.at(0, c, y, x) == la.at(1, c, y, x));
  // batch member equals the single-sample forward
  Tensor ls = m.forward_eval(one);
  CHECK(ls.at(0, 0, 3, 3) == doctest::Approx(la.at(0, 0, 3, 3)));
}

TEST_CASE("zero input with zero-init classifier gives zero logits") {
  Model m = Model::build(tiny_config(AttentionMode::None));
  for (auto& v : m.param("head.w").vec()) v = 0.0f;
  for (auto& v : m.param("head.b").vec()) v = 0.0f;
  Tensor logits = m.forward_eval(Tensor({1, 3, 8, 8}));
  for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0f);
}

TEST_CASE("predict: argmax semantics") {
  Model m = Model::build(tiny_config());
  SUBCASE("dominant class wins everywhere") {
    Tensor logits({1, 3, 2, 2});
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) logits.at(0, 1, y, x) = 5.0f;
    LabelMap lm = argmax_labels(logits, 0);
    for (auto v : lm.labels) CHECK(v == 1);
  }
  SUBCASE("exact ties break toward the lower index") {
    Tensor logits({1, 3, 1, 1}, {2.0f, 2.0f, 1.0f});
    CHECK(argmax_labels(logits, 0).at(0, 0) == 0);
  }
  SUBCASE("predict equals argmax over softmax of forward") {
    std::mt19937_64 rng(3);
    Tensor batch = oracles::random_tensor({1, 3, 16, 16}, rng);
    std::vector<LabelMap> pred = m.predict(batch);
    Tensor logits = m.forward_eval(batch);
    Tape tape;
    const Tensor& probs =
        tape.value(tape.softmax_channels(tape.leaf(logits)));
    LabelMap via_softmax = argmax_labels(probs, 0);
    CHECK(pred[0].labels == via_softmax.labels);
  }
}

TEST_CASE("ablation consistency: forced-identity attention equals the plain model") {
  ModelConfig casc = tiny_config(AttentionMode::Cascade);
  ModelConfig none = tiny_config(AttentionMode::None);
  Model mc = Model::build(casc);
  Model mn = Model::build(none);
  std::mt19937_64 rng(4);
  Tensor batch = oracles::random_tensor({1, 3, 16, 16}, rng);
  Tape tc, tn;
  auto rc = mc.forward(tc, tc.leaf(batch), /*force_attention_identity=*/true);
  auto rn = mn.forward(tn, tn.leaf(batch));
  CHECK(tc.value(rc.logits).vec() == tn.value(rn.logits).vec());
}

TEST_CASE("end-to-end gradient check on a tiny model") {
  ModelConfig c = tiny_config();
  c.encoder_widths = {8};
  Model m = Model::build(c);
  std::mt19937_64 rng(5);
  Tensor batch = oracles::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  LabelMap target = oracles::random_labels(16, 16, 2, rng);
  // d loss / d input against central differences
  auto f = [&](Tape& t, Tape::NodeId in) {
    auto fwd = m.forward(t, in);
    return cross_entropy(t, fwd.logits, {target});
  };
  auto r = finite_diff_check(f, batch, 1e-2f);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("checkpoint round trip and rejection paths") {
  TempDir dir;
  const std::string path = (dir.path / "model.sckp").string();
  Model m = Model::build(tiny_config());
  std::mt19937_64 rng(6);
  Tensor batch = oracles::random_tensor({1, 3, 16, 16}, rng);
  const Tensor before = m.forward_eval(batch);
  save_checkpoint(m, path);

  SUBCASE("round trip reproduces forward bit-exactly") {
    Model back = load_checkpoint(path);
    CHECK(back.config() == m.config());
    CHECK(back.forward_eval(batch).vec() == before.vec());
  }
  SUBCASE("truncated file is rejected cleanly") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    const std::string cut = (dir.path / "cut.sckp").string();
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(cut), DataError);
  }
  SUBCASE("flipped payload byte fails the CRC") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    bytes[bytes.size() / 2] ^= 0x40;
    const std::string bad = (dir.path / "bad.sckp").string();
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("CRC"),
                         DataError);
  }
  SUBCASE("config mismatch is rejected") {
    CHECK_THROWS_WITH_AS(load_checkpoint(path, tiny_config(AttentionMode::None)),
                         doctest::Contains("config mismatch"), DataError);
    CHECK_NOTHROW(load_checkpoint(path, tiny_config(AttentionMode::Cascade)));
  }
}

TEST_CASE("config canonical text round trip") {
  ModelConfig c = tiny_config();
  c.encoder_widths = {16, 32, 64};
  c.seed = 1234567890123ULL;
  CHECK(ModelConfig::from_canonical_text(c.canonical_text()) == c);
}
