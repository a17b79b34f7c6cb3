#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mmmie/gradcheck.hpp"
#include "mmmie/model.hpp"

using namespace mmmie;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = d(rng);
  return t;
}

ModelSpec small_spec() {
  ModelSpec s;
  s.input_dims = {5, 4, 3};
  s.embed_dim = 4;
  s.lstm_hidden = 3;
  s.fusion_hidden = 6;
  s.num_classes = 3;
  s.num_speakers = 3;
  s.max_length = 8;
  return s;
}

ConversationBatch random_conversation(const ModelSpec& spec, std::size_t length, Rng& rng) {
  ConversationBatch c;
  c.id = "c";
  std::uniform_int_distribution<std::size_t> speaker(0, spec.num_speakers - 1), label(0, spec.num_classes - 1);
  for (std::size_t m = 0; m < kModalities; ++m) c.features[m] = random_tensor({length, spec.input_dims[m]}, rng);
  for (std::size_t i = 0; i < length; ++i) {
    c.speaker_ids.push_back(speaker(rng));
    c.labels.push_back(label(rng));
  }
  return c;
}

Tensor run(const ParamSet& params, const ModelSpec& spec, const ConversationBatch& c, const ForwardOptions& o = {}) {
  Tape tape;
  BoundParams bp(tape, params, false);
  return forward(bp, spec, c, o).logits.value();
}

}  // namespace

TEST_CASE("compose_input") {
  Rng rng(1);
  Tape tape;
  const Tensor f = random_tensor({3, 4}, rng);
  const Tensor ids = random_tensor({2, 4}, rng);
  const Tensor pos = random_tensor({5, 4}, rng);
  const std::size_t speakers[] = {1, 0, 1};
  const std::size_t positions[] = {0, 1, 2};

  SUBCASE("zero tables leave the feature unchanged") {
    Var out = compose_input(tape.constant(f), speakers, positions, tape.constant(Tensor({2, 4})),
                            tape.constant(Tensor({5, 4})));
    CHECK(out.value() == f);
  }
  SUBCASE("output minus feature and position is the speaker row") {
    Var out = compose_input(tape.constant(f), speakers, positions, tape.constant(ids), tape.constant(pos));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(out.value().at(i, j) - f.at(i, j) - pos.at(i, j) == doctest::Approx(ids.at(speakers[i], j)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("same speaker, same offset") {
    const Tensor same = Tensor({3, 4});
    Var out = compose_input(tape.constant(same), speakers, positions, tape.constant(ids), tape.constant(Tensor({5, 4})));
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.value().at(0, j) == out.value().at(2, j));
  }
  SUBCASE("no identity table") {
    Var out = compose_input(tape.constant(f), speakers, positions, std::nullopt, tape.constant(pos));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(out.value().at(i, j) == f.at(i, j) + pos.at(i, j));
  }
  SUBCASE("errors") {
    const std::size_t bad_speaker[] = {0, 2, 1};
    CHECK_THROWS(compose_input(tape.constant(f), bad_speaker, positions, tape.constant(ids), tape.constant(pos)));
    const std::size_t far[] = {0, 1, 5};
    CHECK_THROWS(compose_input(tape.constant(f), speakers, far, tape.constant(ids), tape.constant(pos)));
    const std::size_t late[] = {1, 2, 3};
    CHECK_THROWS_AS(compose_input(tape.constant(f), speakers, late, tape.constant(ids), tape.constant(pos)),
                    std::invalid_argument);
    const std::size_t repeat[] = {0, 1, 1};
    CHECK_THROWS_AS(compose_input(tape.constant(f), speakers, repeat, tape.constant(ids), tape.constant(pos)),
                    std::invalid_argument);
    CHECK_THROWS_AS(compose_input(tape.constant(random_tensor({3, 5}, rng)), speakers, positions, tape.constant(ids),
                                  tape.constant(pos)),
                    ShapeError);
  }
}

TEST_CASE("forward shapes and errors") {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_model(spec, 3);
  Rng rng(4);
  for (std::size_t len : {1u, 5u}) {
    const ConversationBatch c = random_conversation(spec, len, rng);
    Tape tape;
    BoundParams bp(tape, params, false);
    ModelOutput out = forward(bp, spec, c);
    CHECK(out.logits.shape() == Shape{len, spec.num_classes});
    for (std::size_t m = 0; m < kModalities; ++m) {
      CHECK(out.features[m].shape() == Shape{len, spec.lstm_hidden});
      CHECK(out.inputs[m].value() == c.features[m]);
    }
  }
  ConversationBatch too_long = random_conversation(spec, spec.max_length + 1, rng);
  CHECK_THROWS_AS(run(params, spec, too_long), std::invalid_argument);
  ConversationBatch ragged = random_conversation(spec, 3, rng);
  ragged.labels.pop_back();
  CHECK_THROWS_AS(run(params, spec, ragged), std::invalid_argument);
  ConversationBatch wrong_width = random_conversation(spec, 3, rng);
  wrong_width.features[kAudio] = random_tensor({3, 7}, rng);
  CHECK_THROWS_AS(run(params, spec, wrong_width), ShapeError);
}

TEST_CASE("forward is causal over utterances") {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_model(spec, 5);
  Rng rng(6);
  const ConversationBatch base = random_conversation(spec, 6, rng);
  const Tensor ref = run(params, spec, base);
  for (std::size_t k = 0; k < 6; ++k) {
    ConversationBatch changed = base;
    for (std::size_t m = 0; m < kModalities; ++m)
      for (std::size_t j = 0; j < spec.input_dims[m]; ++j) changed.features[m].at(k, j) += 1.5;
    changed.speaker_ids[k] = (changed.speaker_ids[k] + 1) % spec.num_speakers;
    const Tensor out = run(params, spec, changed);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t c = 0; c < spec.num_classes; ++c) CHECK(out.at(i, c) == ref.at(i, c));
    bool moved = false;
    for (std::size_t c = 0; c < spec.num_classes; ++c) moved = moved || out.at(k, c) != ref.at(k, c);
    CHECK(moved);
  }
}

TEST_CASE("speaker relabeling with permuted identity rows is bit-identical") {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_model(spec, 7);
  Rng rng(8);
  const ConversationBatch c = random_conversation(spec, 6, rng);
  const std::size_t perm[] = {2, 0, 1};
  ConversationBatch relabeled = c;
  for (auto& s : relabeled.speaker_ids) s = perm[s];
  ParamSet moved = params;
  const Tensor& table = params.get(kIdentityTable);
  Tensor permuted(table.shape());
  for (std::size_t s = 0; s < spec.num_speakers; ++s)
    for (std::size_t j = 0; j < spec.embed_dim; ++j) permuted.at(perm[s], j) = table.at(s, j);
  moved.set(kIdentityTable, permuted);
  CHECK(run(moved, spec, relabeled) == run(params, spec, c));
}

TEST_CASE("zero identity table equals identity disabled") {
  const ModelSpec spec = small_spec();
  ParamSet params = init_model(spec, 9);
  Rng rng(10);
  const ConversationBatch c = random_conversation(spec, 5, rng);
  ForwardOptions off;
  off.identity_on = false;
  const Tensor disabled = run(params, spec, c, off);
  CHECK(run(params, spec, c) != disabled);
  params.set(kIdentityTable, Tensor(params.get(kIdentityTable).shape()));
  CHECK(run(params, spec, c) == disabled);
}

TEST_CASE("identity table gets no gradient when identity is off") {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_model(spec, 11);
  Rng rng(12);
  const ConversationBatch c = random_conversation(spec, 4, rng);
  ForwardOptions off;
  off.identity_on = false;
  Tape tape;
  BoundParams bp(tape, params, true);
  tape.backward(task_loss(forward(bp, spec, c, off).logits, c.labels));
  const Gradients g = bp.gradients();
  for (double v : g.at(kIdentityTable).data()) CHECK(v == 0.0);
}

TEST_CASE("masked modalities ignore their raw features") {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_model(spec, 13);
  Rng rng(14);
  const ConversationBatch c = random_conversation(spec, 4, rng);
  ForwardOptions no_video;
  no_video.modalities = {true, false, true};
  ConversationBatch changed = c;
  changed.features[kVideo] = random_tensor(c.features[kVideo].shape(), rng);
  CHECK(run(params, spec, changed, no_video) == run(params, spec, c, no_video));
  CHECK(run(params, spec, changed) != run(params, spec, c));
}

TEST_CASE("assembled model passes the finite-difference check") {
  ModelSpec spec;
  spec.input_dims = {4, 4, 4};
  spec.embed_dim = 4;
  spec.lstm_hidden = 3;
  spec.fusion_hidden = 5;
  spec.num_classes = 3;
  spec.num_speakers = 2;
  spec.max_length = 2;
  Rng rng(15);
  ConversationBatch c = random_conversation(spec, 2, rng);
  c.speaker_ids = {0, 1};
  const double err = param_finite_difference_error(
      init_model(spec, 16), {}, [&](Tape&, const BoundParams& p, std::span<const Var>) {
        return task_loss(forward(p, spec, c).logits, c.labels);
      });
  CHECK(err < 1e-4);
}

TEST_CASE("task_loss examples") {
  Tape tape;
  const std::size_t zero[] = {0};
  CHECK(task_loss(tape.constant(Tensor::matrix({{1.0, 0.0, 0.0}})), zero).value().item() ==
        doctest::Approx(-std::log(std::numbers::e / (std::numbers::e + 2.0))).epsilon(1e-12));
  CHECK(task_loss(tape.constant(Tensor::matrix({{1.0, 0.0, 0.0}})), zero).value().item() ==
        doctest::Approx(0.5514).epsilon(1e-4));
  for (std::size_t classes : {2u, 4u, 7u}) {
    const std::size_t labels[] = {0, classes - 1};
    const double loss = task_loss(tape.constant(Tensor::full({2, classes}, 0.3)), labels).value().item();
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(classes))).epsilon(1e-12));
  }
  const std::size_t one[] = {1};
  const double confident = task_loss(tape.constant(Tensor::matrix({{-30.0, 30.0}})), one).value().item();
  CHECK(confident >= 0.0);
  CHECK(confident < 1e-20);
  const std::size_t bad[] = {3};
  CHECK_THROWS_AS(task_loss(tape.constant(Tensor::matrix({{1.0, 0.0, 0.0}})), bad), std::out_of_range);
  CHECK_THROWS_AS(task_loss(tape.constant(Tensor::matrix({{1.0, 0.0, 0.0}})), std::span<const std::size_t>{}),
                  ShapeError);
}

TEST_CASE("total_loss assembly") {
  const LossBundle b = total_loss(1.0, -0.5, 2.0, 0.3, 0.0002);
  CHECK(b.total == doctest::Approx(0.8504).epsilon(1e-12));
  CHECK(b.total - (b.task + b.alpha * b.mi + b.beta * b.msi) == 0.0);
  CHECK(total_loss(1.25, 9.0, 7.0, 0.0, 0.0).total == 1.25);

  // Linearity: equal increments in one component change the total by equal amounts.
  const double base = total_loss(1.0, -0.5, 2.0, 0.3, 0.0002).total;
  CHECK(total_loss(2.0, -0.5, 2.0, 0.3, 0.0002).total - base == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total_loss(1.0, 0.5, 2.0, 0.3, 0.0002).total - base == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(total_loss(1.0, -0.5, 3.0, 0.3, 0.0002).total - base == doctest::Approx(0.0002).epsilon(1e-9));

  CHECK_THROWS_WITH_AS(total_loss(1.0, std::nan(""), 2.0, 0.3, 0.0002), doctest::Contains("mi"), NumericalError);
  CHECK_THROWS_WITH_AS(total_loss(1.0, 0.0, INFINITY, 0.3, 0.0002), doctest::Contains("msi"), NumericalError);
  CHECK_THROWS_AS(total_loss(1.0, 0.0, 0.0, -0.1, 0.0), std::invalid_argument);

  Tape tape;
  Var task = tape.constant(Tensor::scalar(1.0));
  Var mi = tape.constant(Tensor::scalar(-0.5));
  Var msi = tape.constant(Tensor::scalar(2.0));
  const TapedLoss all = total_loss(task, mi, msi, 0.3, 0.0002, 0.0, 0.0);
  CHECK(all.total.value().item() == all.bundle.total);
  CHECK(all.bundle.total == doctest::Approx(0.8504).epsilon(1e-12));
  const TapedLoss none = total_loss(task, std::nullopt, std::nullopt, 0.3, 0.0002, -0.5, 2.0);
  CHECK(none.bundle.total == 1.0);
  CHECK(none.bundle.alpha == 0.0);
  CHECK(none.bundle.beta == 0.0);
  CHECK(none.bundle.mi == -0.5);
}

TEST_CASE("logits stay finite over many random parameter draws") {
  const ModelSpec spec = small_spec();
  Rng rng(17);
  const ConversationBatch c = random_conversation(spec, 4, rng);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Tensor logits = run(init_model(spec, seed), spec, c);
    REQUIRE(logits.all_finite());
  }
}
