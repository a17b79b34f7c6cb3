#include "mmmie/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mmmie/estimators.hpp"
#include "mmmie/model.hpp"

namespace mmmie {
namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from zero so relu, max and clamp kinks stay out of the
// finite-difference stencil.
Tensor off_kink(Shape shape, Rng& rng) {
  Tensor t = uniform(std::move(shape), rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data())
    if (sign(rng)) v = -v;
  return t;
}

// Random fixed projection to a scalar; a plain sum would hide errors that cancel.
Var contract(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, tape.constant(uniform(out.shape(), rng))));
}

struct Case {
  std::string name;
  std::function<double(const FiniteDifferenceOptions&)> run;
};

Case op_case(std::string name, std::vector<Tensor> inputs, LossBuilder build) {
  return {std::move(name), [inputs = std::move(inputs), build = std::move(build)](const FiniteDifferenceOptions& o) {
            return finite_difference_error(build, inputs, o);
          }};
}

Case param_case(std::string name, ParamSet params, std::vector<Tensor> inputs, ParamLossBuilder build) {
  return {std::move(name), [params = std::move(params), inputs = std::move(inputs),
                            build = std::move(build)](const FiniteDifferenceOptions& o) {
            return param_finite_difference_error(params, inputs, build, o);
          }};
}

LossBuilder unary(Var (*fn)(Var)) {
  return [fn](Tape& t, std::span<const Var> in) { return contract(t, fn(in[0]), 11); };
}

LossBuilder binary(Var (*fn)(Var, Var)) {
  return [fn](Tape& t, std::span<const Var> in) { return contract(t, fn(in[0], in[1]), 12); };
}

std::vector<Case> build_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Case> cases;

  cases.push_back(op_case("op/add", {uniform({3, 4}, rng), uniform({4}, rng)}, binary(add)));
  cases.push_back(op_case("op/sub", {uniform({3, 4}, rng), uniform({3, 4}, rng)}, binary(sub)));
  cases.push_back(op_case("op/mul", {uniform({3, 4}, rng), uniform({4}, rng)}, binary(mul)));
  cases.push_back(op_case("op/div", {uniform({3, 4}, rng), uniform({3, 4}, rng, 0.5, 1.5)}, binary(div)));
  cases.push_back(op_case("op/neg", {uniform({3, 4}, rng)}, unary(neg)));
  cases.push_back(op_case("op/exp", {uniform({3, 4}, rng)}, unary(exp)));
  cases.push_back(op_case("op/log", {uniform({3, 4}, rng, 0.3, 2.0)}, unary(log)));
  cases.push_back(op_case("op/tanh", {uniform({3, 4}, rng)}, unary(tanh)));
  cases.push_back(op_case("op/sigmoid", {uniform({3, 4}, rng)}, unary(sigmoid)));
  cases.push_back(op_case("op/relu", {off_kink({3, 4}, rng)}, unary(relu)));
  cases.push_back(op_case("op/square", {uniform({3, 4}, rng)}, unary(square)));
  cases.push_back(op_case("op/scale", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, scale(in[0], -1.7), 13); }));
  cases.push_back(op_case("op/add_scalar", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, add_scalar(in[0], 0.4), 14); }));
  cases.push_back(op_case("op/clamp", {off_kink({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, clamp(in[0], -0.5, 0.5), 15); }));
  cases.push_back(op_case("op/matmul", {uniform({3, 4}, rng), uniform({4, 2}, rng)}, binary(matmul)));
  cases.push_back(op_case("op/transpose", {uniform({3, 4}, rng)}, unary(transpose)));
  cases.push_back(op_case("op/sum", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, sum(in[0], 1), 16); }));
  cases.push_back(op_case("op/mean", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, mean(in[0], 0), 17); }));
  cases.push_back(op_case("op/max", {off_kink({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, max(in[0], 1), 18); }));
  cases.push_back(op_case("op/logsumexp", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, logsumexp(in[0], 1), 19); }));
  cases.push_back(op_case("op/softmax_rows", {uniform({4, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, softmax_rows(in[0]), 20); }));
  cases.push_back(op_case("op/softmax_rows_causal", {uniform({4, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, softmax_rows(in[0], true), 21); }));
  cases.push_back(op_case("op/reshape", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, reshape(in[0], {2, 6}), 22); }));
  cases.push_back(op_case("op/slice_cols", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, slice_cols(in[0], 1, 3), 23); }));
  cases.push_back(op_case("op/row", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, row(in[0], 1), 24); }));
  cases.push_back(op_case("op/gather_rows", {uniform({3, 4}, rng)}, [](Tape& t, std::span<const Var> in) {
    const std::size_t idx[] = {2, 0, 2, 1};
    return contract(t, gather_rows(in[0], idx), 25);
  }));
  cases.push_back(op_case("op/pick", {uniform({3, 4}, rng)}, [](Tape& t, std::span<const Var> in) {
    const std::size_t idx[] = {3, 0, 2};
    return contract(t, pick(in[0], idx), 26);
  }));
  cases.push_back(op_case("op/concat_cols", {uniform({3, 2}, rng), uniform({3, 3}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, concat_cols(in), 27); }));
  cases.push_back(op_case("op/concat_rows", {uniform({2, 3}, rng), uniform({1, 3}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, concat_rows(in), 28); }));

  {
    const MlpSpec spec{{3, 5, 2}, Activation::tanh, Activation::sigmoid};
    cases.push_back(param_case("block/mlp", init_params(spec, seed + 1), {uniform({4, 3}, rng)},
                               [spec](Tape& t, const BoundParams& p, std::span<const Var> in) {
                                 return contract(t, mlp_forward(p, "", spec, in[0]), 31);
                               }));
  }
  cases.push_back(param_case("block/lstm", init_params(LstmSpec{3, 4}, seed + 2), {uniform({4, 3}, rng)},
                             [](Tape& t, const BoundParams& p, std::span<const Var> in) {
                               return contract(t, lstm_forward(p, "", in[0]), 32);
                             }));
  cases.push_back(param_case("block/attention", init_params(AttentionSpec{4}, seed + 3), {uniform({5, 4}, rng)},
                             [](Tape& t, const BoundParams& p, std::span<const Var> in) {
                               return contract(t, self_attention(p, "", in[0], true).output, 33);
                             }));
  cases.push_back(op_case("block/embedding_lookup", {uniform({3, 4}, rng)},
                          [](Tape& t, std::span<const Var> in) { return contract(t, embedding_lookup(in[0], 2), 34); }));
  cases.push_back(op_case("block/compose_input", {uniform({4, 3}, rng), uniform({2, 3}, rng), uniform({6, 3}, rng)},
                          [](Tape& t, std::span<const Var> in) {
                            const std::size_t speakers[] = {0, 1, 1, 0};
                            const std::size_t positions[] = {0, 1, 2, 3};
                            return contract(t, compose_input(in[0], speakers, positions, in[1], in[2]), 35);
                          }));

  {
    const std::size_t hidden[] = {6};
    StatisticNet net = StatisticNet::create(2, 3, hidden, seed + 4);
    auto spec = std::make_shared<MlpSpec>(net.spec);
    const std::vector<std::size_t> perm = shuffle_permutation(6, seed + 5);
    cases.push_back(param_case("estimator/dv_lower_bound", net.params, {uniform({6, 2}, rng), uniform({6, 3}, rng)},
                               [spec, perm](Tape&, const BoundParams& p, std::span<const Var> in) {
                                 BoundStatisticNet bound{spec.get(), p};
                                 return dv_lower_bound(bound, in[0], in[1], perm).value;
                               }));
  }
  {
    const std::size_t hidden[] = {5};
    auto nets = std::make_shared<std::array<StatisticNet, 3>>(std::array<StatisticNet, 3>{
        StatisticNet::create(3, 3, hidden, seed + 6), StatisticNet::create(3, 3, hidden, seed + 7),
        StatisticNet::create(3, 3, hidden, seed + 8)});
    auto perms = std::make_shared<std::array<std::vector<std::size_t>, 3>>(std::array<std::vector<std::size_t>, 3>{
        shuffle_permutation(5, seed + 9), shuffle_permutation(5, seed + 10), shuffle_permutation(5, seed + 11)});
    cases.push_back(op_case("estimator/mine_loss", {uniform({5, 3}, rng), uniform({5, 3}, rng), uniform({5, 3}, rng)},
                            [nets, perms](Tape& t, std::span<const Var> in) {
                              const std::array<BoundStatisticNet, 3> bound{bind(t, (*nets)[0]), bind(t, (*nets)[1]),
                                                                           bind(t, (*nets)[2])};
                              return mine_loss(bound, in[0], in[1], in[2], *perms).loss;
                            }));
  }
  {
    const std::size_t hidden[] = {5};
    auto net = std::make_shared<VariationalNet>(VariationalNet::create(3, 2, hidden, seed + 12));
    cases.push_back(param_case("estimator/q_log_likelihood", net->params, {uniform({5, 3}, rng), uniform({5, 2}, rng)},
                               [net](Tape& t, const BoundParams& p, std::span<const Var> in) {
                                 BoundVariationalNet q{net.get(), p};
                                 return contract(t, q_log_likelihood(q, in[0], in[1]), 36);
                               }));
    cases.push_back(param_case("estimator/vclub", net->params, {uniform({5, 3}, rng), uniform({5, 2}, rng)},
                               [net](Tape&, const BoundParams& p, std::span<const Var> in) {
                                 BoundVariationalNet q{net.get(), p};
                                 return vclub_estimate(q, in[0], in[1]).value;
                               }));
  }
  {
    const std::size_t hidden[] = {4};
    auto nets = std::make_shared<std::array<VariationalNet, 3>>(std::array<VariationalNet, 3>{
        VariationalNet::create(2, 3, hidden, seed + 13), VariationalNet::create(3, 3, hidden, seed + 14),
        VariationalNet::create(2, 3, hidden, seed + 15)});
    cases.push_back(op_case("estimator/msi_loss",
                            {uniform({4, 2}, rng), uniform({4, 3}, rng), uniform({4, 2}, rng), uniform({4, 3}, rng),
                             uniform({4, 3}, rng), uniform({4, 3}, rng)},
                            [nets](Tape& t, std::span<const Var> in) {
                              const std::array<BoundVariationalNet, 3> q{
                                  bind(t, (*nets)[0], false), bind(t, (*nets)[1], false), bind(t, (*nets)[2], false)};
                              const std::array<Var, 3> inputs{in[0], in[1], in[2]};
                              const std::array<Var, 3> features{in[3], in[4], in[5]};
                              return msi_loss(q, inputs, features).loss;
                            }));
  }

  cases.push_back(op_case("loss/task", {uniform({4, 3}, rng, -2.0, 2.0)}, [](Tape&, std::span<const Var> in) {
    const std::size_t labels[] = {0, 2, 1, 2};
    return task_loss(in[0], labels);
  }));
  cases.push_back(op_case("loss/total", {uniform({}, rng), uniform({}, rng), uniform({}, rng)},
                          [](Tape&, std::span<const Var> in) {
                            return total_loss(in[0], in[1], in[2], 0.3, 0.0002, 0.0, 0.0).total;
                          }));

  {
    ModelSpec spec;
    spec.input_dims = {4, 3, 2};
    spec.embed_dim = 4;
    spec.lstm_hidden = 3;
    spec.fusion_hidden = 5;
    spec.num_classes = 3;
    spec.num_speakers = 2;
    spec.max_length = 4;
    auto conv = std::make_shared<ConversationBatch>();
    conv->id = "gradcheck";
    for (std::size_t m = 0; m < kModalities; ++m) conv->features[m] = uniform({3, spec.input_dims[m]}, rng);
    conv->speaker_ids = {0, 1, 0};
    conv->labels = {2, 0, 1};
    cases.push_back(param_case("model/full", init_model(spec, seed + 16), {},
                               [spec, conv](Tape&, const BoundParams& p, std::span<const Var>) {
                                 return task_loss(forward(p, spec, *conv).logits, conv->labels);
                               }));
  }
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_blocks() {
  std::vector<std::string> names;
  for (const auto& c : build_cases(0)) names.push_back(c.name);
  return names;
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options) {
  const std::vector<Case> cases = build_cases(options.seed);
  if (options.corrupt_block) {
    bool known = false;
    for (const auto& c : cases) known = known || c.name == *options.corrupt_block;
    if (!known) throw std::invalid_argument("gradcheck: unknown block '" + *options.corrupt_block + "'");
  }
  std::vector<GradcheckEntry> out;
  for (const auto& c : cases) {
    FiniteDifferenceOptions fd;
    if (options.corrupt_block == c.name) fd.analytic_scale = 1.01;
    const double err = c.run(fd);
    out.push_back(GradcheckEntry{c.name, err, err < options.tolerance});
  }
  return out;
}

}  // namespace mmmie
