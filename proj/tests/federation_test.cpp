#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace fgssl;

namespace {

struct Fixture {
  Graph graph;
  SplitMasks masks;
  ClientPartition partition;
};

Fixture fixture(std::size_t clients, std::uint64_t seed = 3) {
  Fixture f{testutil::small_sbm(12, 3, seed, 6), {}, {}};
  f.masks = split_nodes(f.graph, {}, seed);
  f.partition.num_clients = clients;
  f.partition.client_of.resize(f.graph.num_nodes());
  for (NodeId i = 0; i < f.graph.num_nodes(); ++i) f.partition.client_of[i] = i % clients;
  return f;
}

TrainConfig small_config(Method m, std::size_t rounds = 3) {
  TrainConfig c;
  c.method = m;
  c.rounds = rounds;
  c.epochs = 2;
  c.hidden = 8;
  c.learning_rate = 0.05;
  c.threads = 1;
  return c;
}

/// Single-process trainer written directly against the model API.
std::vector<Tensor> centralized(const Fixture& f, const TrainConfig& c, std::uint64_t seed, bool reset_each_round) {
  GnnModel model = make_model({f.graph.feature_dim(), c.hidden, f.graph.num_classes(), c.heads}, seed);
  SgdState opt{c.learning_rate, c.momentum, c.weight_decay, {}};
  for (std::size_t t = 0; t < c.rounds; ++t) {
    if (reset_each_round) opt.reset();
    for (std::size_t e = 0; e < c.epochs; ++e) {
      Tape tape;
      const auto params = bind(model, tape, true);
      const Var loss = cross_entropy(model_forward(model, params, f.graph).logits, f.graph.labels(), f.masks.train);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const Var& p : params) grads.push_back(tape.grad(p));
      sgd_step(model.params(), grads, opt);
    }
  }
  return model.params();
}

}  // namespace

TEST(Broadcast, CopiesBitwiseWithoutAliasing) {
  const Fixture f = fixture(2);
  const auto parts = client_subgraphs(f.graph, f.masks, f.partition);
  const ModelSpec spec{6, 8, 3, 1};
  ServerState server{make_model(spec, 1), 0};
  std::vector<ClientState> clients{{0, parts[0], make_model(spec, 2), {}}, {1, parts[1], make_model(spec, 3), {}}};
  clients[0].optimizer.velocity = server.model.params();
  broadcast(server, clients);
  for (const ClientState& c : clients) EXPECT_TRUE(testutil::bitwise_equal(c.model.params(), server.model.params()));
  EXPECT_TRUE(clients[0].optimizer.velocity.empty());
  broadcast(server, clients);
  EXPECT_TRUE(testutil::bitwise_equal(clients[1].model.params(), server.model.params()));
  clients[0].model.params()[0][0] += 1.0;
  EXPECT_FALSE(testutil::bitwise_equal(clients[0].model.params(), server.model.params()));
  EXPECT_TRUE(testutil::bitwise_equal(clients[1].model.params(), server.model.params()));

  clients[0].optimizer.velocity = server.model.params();
  broadcast(server, clients, VelocityPolicy::carry);
  EXPECT_FALSE(clients[0].optimizer.velocity.empty());

  std::vector<ClientState> wrong{{0, parts[0], make_model({6, 4, 3, 1}, 2), {}}};
  EXPECT_THROW(broadcast(server, wrong), ShapeError);
}

TEST(LocalUpdate, ZeroLearningRateLeavesParameters) {
  const Fixture f = fixture(1);
  const auto parts = client_subgraphs(f.graph, f.masks, f.partition);
  TrainConfig c = small_config(Method::fgssl);
  c.learning_rate = 0.0;
  const GnnModel global = make_model({6, 8, 3, 1}, 4);
  ClientState client{0, parts[0], global, {}};
  const EpochLosses l = local_update(client, global, c, 0, 0);
  EXPECT_TRUE(testutil::bitwise_equal(client.model.params(), global.params()));
  EXPECT_GT(l.ce, 0.0);
  EXPECT_GT(l.fnsc, 0.0);
}

TEST(LocalUpdate, SnapshotIsNotModified) {
  const Fixture f = fixture(1);
  const auto parts = client_subgraphs(f.graph, f.masks, f.partition);
  const GnnModel global = make_model({6, 8, 3, 1}, 4);
  const GnnModel copy = global;
  ClientState client{0, parts[0], global, {}};
  local_update(client, global, small_config(Method::fgssl), 0, 0);
  EXPECT_TRUE(testutil::bitwise_equal(global.params(), copy.params()));
  EXPECT_FALSE(testutil::bitwise_equal(client.model.params(), copy.params()));
}

TEST(Aggregate, WeightedMean) {
  const std::vector<Tensor> a{Tensor(1, 1, 1.0)}, b{Tensor(1, 1, 0.0)};
  const std::vector<Tensor> c{Tensor(1, 1, 4.0)};
  EXPECT_EQ(aggregate({&a, &c}, {1, 3})[0][0], 3.25);
  const std::vector<Tensor> one{Tensor(1, 1, 1.0)}, three{Tensor(1, 1, 3.0)};
  EXPECT_DOUBLE_EQ(aggregate({&one, &three}, {1, 1})[0][0], 2.0);
  EXPECT_DOUBLE_EQ(aggregate({&b, &c}, {1, 3})[0][0], 3.0);
  EXPECT_THROW(aggregate({&a, &c}, {1}), ShapeError);
  const std::vector<Tensor> wide{Tensor(1, 2, 0.0)};
  EXPECT_THROW(aggregate({&a, &wide}, {1, 1}), ShapeError);
}

TEST(Aggregate, IdenticalClientsAreAFixedPointAndSingleClientIsIdentity) {
  const std::vector<Tensor> p = make_model({5, 4, 2, 2}, 9).params();
  EXPECT_TRUE(testutil::bitwise_equal(aggregate({&p}, {17}), p));
  const auto avg = aggregate({&p, &p, &p}, {2, 5, 7});
  for (std::size_t k = 0; k < p.size(); ++k)
    for (std::size_t i = 0; i < p[k].size(); ++i) EXPECT_NEAR(avg[k][i], p[k][i], 1e-15);
}

TEST(Evaluate, PerfectAndRandomLogits) {
  const std::vector<int> labels{0, 1, 1, 0};
  const Tensor z(4, 2, {1, 0, 0, 1, 0, 1, 1, 0});
  EXPECT_EQ(count_correct(z, labels, {0, 1, 2, 3}).value(), 1.0);
  double total = 0.0;
  std::vector<int> balanced(50);
  for (std::size_t i = 0; i < 50; ++i) balanced[i] = static_cast<int>(i % 2);
  std::vector<NodeId> all(50);
  std::iota(all.begin(), all.end(), 0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) total += count_correct(testutil::random_tensor(50, 2, seed), balanced, all).value();
  EXPECT_NEAR(total / 1000.0, 0.5, 0.04);
  const Fixture f = fixture(1);
  SplitMasks none;
  none.train.assign(1, 0);
  const Subgraph s{f.graph, none, {}};
  EXPECT_THROW(evaluate(make_model({6, 4, 3, 1}, 0), {s}, SplitKind::test), ConfigError);
}

TEST(Federation, ZeroWeightFgsslMatchesFedAvgBitwise) {
  const Fixture f = fixture(3);
  TrainConfig c = small_config(Method::fgssl);
  c.fnsc.lambda = 0.0;
  c.fgsd.lambda = 0.0;
  const RunResult a = run_experiment(c, f.graph, f.masks, f.partition, 5);
  c.method = Method::fedavg;
  const RunResult b = run_experiment(c, f.graph, f.masks, f.partition, 5);
  EXPECT_TRUE(testutil::bitwise_equal(a.global_model.params(), b.global_model.params()));
  for (std::size_t t = 0; t < a.rounds.size(); ++t) EXPECT_EQ(a.rounds[t].test_acc, b.rounds[t].test_acc);
}

TEST(Federation, SingleClientFedAvgMatchesCentralizedTraining) {
  const Fixture f = fixture(1);
  TrainConfig c = small_config(Method::fedavg, 4);
  const RunResult reset = run_experiment(c, f.graph, f.masks, f.partition, 2);
  EXPECT_TRUE(testutil::bitwise_equal(reset.global_model.params(), centralized(f, c, 2, true)));
  c.velocity = VelocityPolicy::carry;
  const RunResult carry = run_experiment(c, f.graph, f.masks, f.partition, 2);
  EXPECT_TRUE(testutil::bitwise_equal(carry.global_model.params(), centralized(f, c, 2, false)));
  EXPECT_FALSE(testutil::bitwise_equal(carry.global_model.params(), reset.global_model.params()));
}

TEST(Federation, GlobalMethodIsCentralizedWithCarriedMomentum) {
  const Fixture f = fixture(3);
  const TrainConfig c = small_config(Method::global, 3);
  const RunResult r = run_experiment(c, f.graph, f.masks, f.partition, 6);
  EXPECT_EQ(r.client_models.size(), 1u);
  EXPECT_TRUE(testutil::bitwise_equal(r.global_model.params(), centralized(f, c, 6, false)));
}

TEST(Federation, ReproducibleAndThreadIndependent) {
  const Fixture f = fixture(3);
  for (Method m : {Method::local, Method::fedprox, Method::fgssl}) {
    TrainConfig c = small_config(m);
    const RunResult a = run_experiment(c, f.graph, f.masks, f.partition, 1);
    const RunResult b = run_experiment(c, f.graph, f.masks, f.partition, 1);
    c.threads = 3;
    const RunResult p = run_experiment(c, f.graph, f.masks, f.partition, 1);
    EXPECT_EQ(a.rounds, b.rounds);
    EXPECT_EQ(a.rounds, p.rounds);
    for (std::size_t k = 0; k < a.client_models.size(); ++k) {
      EXPECT_TRUE(testutil::bitwise_equal(a.client_models[k].params(), p.client_models[k].params()));
    }
  }
}

TEST(Federation, LocalClientsNeverSynchronize) {
  const Fixture f = fixture(3);
  const RunResult r = run_experiment(small_config(Method::local), f.graph, f.masks, f.partition, 0);
  ASSERT_EQ(r.client_models.size(), 3u);
  EXPECT_FALSE(testutil::bitwise_equal(r.client_models[0].params(), r.client_models[1].params()));
  EXPECT_EQ(r.rounds.size(), 3u);
  EXPECT_GT(r.rounds.back().loss_ce, 0.0);
  EXPECT_EQ(r.rounds.back().loss_fnsc, 0.0);
}

TEST(Federation, DivergenceReportsClientAndRound) {
  const Fixture f = fixture(2);
  TrainConfig c = small_config(Method::fedavg);
  c.learning_rate = 1e300;
  try {
    run_experiment(c, f.graph, f.masks, f.partition, 0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("client"), std::string::npos);
    EXPECT_NE(what.find("round"), std::string::npos);
  }
}

TEST(Federation, InvalidConfigRejected) {
  const Fixture f = fixture(2);
  TrainConfig c = small_config(Method::fgssl);
  c.fnsc.tau = 0.0;
  EXPECT_THROW(run_experiment(c, f.graph, f.masks, f.partition, 0), ConfigError);
  EXPECT_THROW(parse_method("fedsgd"), ConfigError);
  EXPECT_EQ(parse_method("fedprox"), Method::fedprox);
}
