#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedsc/errors.hpp"
#include "fedsc/federation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fedsc;
using test::centralized_epochs;
using test::random_matrix;

namespace {

Scene small_scene(int clients, std::uint64_t seed, int n_train = 40) {
  SceneSpec spec;
  spec.clients = clients;
  spec.n_train = {n_train};
  spec.n_test = {10};
  spec.max_len = 12;
  spec.min_length = 4;
  spec.max_length = 12;
  spec.shared_lexicon = 8;
  spec.domain_lexicon = 4;
  spec.filler_lexicon = 20;
  return generate_synthetic_scene(spec, seed);
}

ModelDims small_dims(const Scene& s) {
  return {.vocab = static_cast<int>(s.vocab.size()), .embed = 8, .hidden = 4, .mlp = 8, .classes = s.classes};
}

RoundConfig small_rounds(std::uint64_t seed) {
  RoundConfig rc;
  rc.local_epochs = 2;
  rc.batch_size = 8;
  rc.lr = 0.05;
  rc.init_scale = 0.3;
  rc.seed = seed;
  return rc;
}

ParamSet scalar_params(double v) {
  ParamSet p;
  p.add("w", Component::classifier_s, Matrix::Constant(1, 1, v));
  return p;
}


}  // namespace

TEST_CASE("mode sharing layouts") {
  using C = Component;
  const auto fedper = make_mode(ModeName::fedper);
  CHECK(fedper.sharing.shared(C::rnn));
  CHECK(fedper.sharing[C::classifier_s] == Placement::local);
  CHECK_FALSE(fedper.sharing.global_model_complete());
  const auto lg = make_mode(ModeName::lg);
  CHECK(lg.sharing.shared(C::classifier_s));
  CHECK(lg.sharing[C::embedding] == Placement::local);
  CHECK_FALSE(lg.sharing.global_model_complete());
  const auto kt = make_mode(ModeName::kteps);
  CHECK(kt.sharing.global_model_complete());
  CHECK(kt.sharing[C::projection_p] == Placement::local);
  CHECK(kt.uses_kd);
  CHECK_FALSE(kt.uses_pdr);
  CHECK(make_mode(ModeName::kteps_star).uses_pdr);
  CHECK_FALSE(make_mode(ModeName::kteps, Arch::A).sharing.present(C::projection_s));
  CHECK(make_mode(ModeName::kteps, Arch::B).sharing[C::rnn_p] == Placement::local);
  CHECK(make_mode(ModeName::kteps, Arch::C).sharing[C::embedding_p] == Placement::local);
  CHECK_FALSE(make_mode(ModeName::individual).transmits());
  const auto pfl = make_mode(ModeName::pfl_da);
  CHECK(pfl.weight_ce_s == 0.5);
  const auto loss = mode_loss(make_mode(ModeName::fedavg), LossConfig{});
  CHECK(loss.lambda_kd == 0.0);
  CHECK(loss.lambda_div == 0.0);
  CHECK(parse_mode("kteps_star") == ModeName::kteps_star);
  CHECK(mode_name(ModeName::pfl_da) == "pfl_da");
  CHECK(parse_arch("B") == Arch::B);
  CHECK_THROWS_AS(parse_mode("fedprox"), ConfigError);
  CHECK_THROWS_AS(parse_arch("D"), ConfigError);
}

TEST_CASE("add_noise") {
  Rng rng(1);
  const Matrix m = random_matrix(5, 5, rng);
  Rng a(2);
  CHECK(test::bit_equal(add_noise(m, 0.0, a), m));

  Rng n(3);
  const Matrix z = add_noise(Matrix::Zero(100000, 1), 1.0, n);
  const double mean = z.mean();
  const double sd = std::sqrt((z.array() - mean).square().sum() / static_cast<double>(z.size()));
  CHECK(std::abs(mean) < 4.0 / std::sqrt(1e5));
  CHECK(std::abs(sd - 1.0) < 0.02);

  Rng s1(4), s2(5);
  CHECK_FALSE(test::bit_equal(add_noise(m, 0.01, s1), add_noise(m, 0.01, s2)));
  CHECK_THROWS_AS(add_noise(m, -1.0, s1), ConfigError);

  ParamSet p = scalar_params(3.0);
  Rng r0(6);
  CHECK(bit_equal(add_noise(p, 0.0, r0), p));
}

TEST_CASE("weight tables") {
  CHECK_NOTHROW(check_weights(std::vector<double>{0.25, 0.75}));
  CHECK_THROWS_AS(check_weights(std::vector<double>{0.5, 0.6}), ConfigError);
  CHECK_THROWS_AS(check_weights(std::vector<double>{1.5, -0.5}), ConfigError);
  CHECK_THROWS_AS(check_weights(std::vector<double>{NAN, 1.0}), ConfigError);
  CHECK_THROWS_AS(check_weights(std::vector<double>{}), ConfigError);
}

TEST_CASE("aggregate computes the weighted mean") {
  const ParamSet a = scalar_params(0.0), b = scalar_params(4.0);
  const std::vector<ClientTensors> ups{{0, &a}, {1, &b}};
  const std::vector<double> w{0.25, 0.75};
  CHECK(aggregate(ups, w)["w"](0, 0) == 3.0);

  const std::vector<ClientTensors> same{{0, &b}, {1, &b}};
  CHECK(aggregate(same, w)["w"](0, 0) == 4.0);

  const std::vector<ClientTensors> missing{{0, &a}};
  CHECK_THROWS_AS(aggregate(missing, w), ConfigError);
  const std::vector<ClientTensors> dup{{0, &a}, {0, &b}};
  CHECK_THROWS_AS(aggregate(dup, w), ConfigError);
  const std::vector<ClientTensors> unknown{{0, &a}, {2, &b}};
  CHECK_THROWS_AS(aggregate(unknown, w), ConfigError);
  const std::vector<double> bad{0.3, 0.3};
  CHECK_THROWS_AS(aggregate(ups, bad), ConfigError);
}

TEST_CASE("aggregate is invariant to upload order and linear") {
  Rng rng(7);
  const int K = 5;
  std::vector<ParamSet> xs(K), ys(K);
  for (int k = 0; k < K; ++k) {
    xs[k].add("a", Component::rnn, random_matrix(6, 3, rng));
    xs[k].add("b", Component::classifier_s, random_matrix(2, 1, rng));
    ys[k].add("a", Component::rnn, random_matrix(6, 3, rng));
    ys[k].add("b", Component::classifier_s, random_matrix(2, 1, rng));
  }
  const std::vector<double> w{0.1, 0.3, 0.2, 0.25, 0.15};
  std::vector<ClientTensors> ups;
  for (int k = 0; k < K; ++k) ups.push_back({k, &xs[k]});
  const ParamSet base = aggregate(ups, w);
  std::vector<int> perm{0, 1, 2, 3, 4};
  test::ThreadScope threads(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::next_permutation(perm.begin(), perm.end());
    std::vector<ClientTensors> shuffled;
    for (int k : perm) shuffled.push_back({k, &xs[k]});
    CHECK(bit_equal(aggregate(shuffled, w, Exec::serial), base));
    CHECK(bit_equal(aggregate(shuffled, w, Exec::parallel), base));
  }

  const double alpha = 0.7, beta = -1.3;
  std::vector<ParamSet> zs(K);
  std::vector<ClientTensors> yu, zu;
  for (int k = 0; k < K; ++k) {
    zs[k] = xs[k];
    for (std::size_t t = 0; t < zs[k].size(); ++t)
      zs[k].at(t).value = alpha * xs[k].at(t).value + beta * ys[k].at(t).value;
    yu.push_back({k, &ys[k]});
  }
  for (int k = 0; k < K; ++k) zu.push_back({k, &zs[k]});
  const ParamSet lhs = aggregate(zu, w);
  const ParamSet ay = aggregate(yu, w);
  for (std::size_t t = 0; t < lhs.size(); ++t) {
    const Matrix rhs = alpha * base.at(t).value + beta * ay.at(t).value;
    CHECK((lhs.at(t).value - rhs).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("row-subset embedding merge") {
  Matrix table = Matrix::Constant(5, 2, -1.0);
  const std::vector<int> ids0{0, 1}, ids1{1, 2}, ids2{3};
  Matrix r0(2, 2), r1(2, 2), r2(1, 2);
  r0 << 1, 1, 2, 2;
  r1 << 4, 4, 6, 6;
  r2 << 9, 8;
  const std::vector<ClientRows> ups{{0, &ids0, &r0}, {1, &ids1, &r1}, {2, &ids2, &r2}};
  const std::vector<double> w{0.25, 0.25, 0.5};
  merge_embedding_rows(table, ups, w);
  CHECK(table(0, 0) == 1.0);   // only client 0
  CHECK(table(1, 0) == 3.0);   // equal weights: mean of 2 and 4
  CHECK(table(2, 1) == 6.0);   // only client 1
  CHECK(table(3, 0) == 9.0);   // only client 2, weight renormalized to 1
  CHECK(table(3, 1) == 8.0);
  CHECK(table(4, 0) == -1.0);  // nobody sent row 4

  Matrix t2 = Matrix::Zero(5, 2);
  const std::vector<int> dup{1, 1};
  const std::vector<ClientRows> bad{{0, &dup, &r0}, {1, &ids1, &r1}, {2, &ids2, &r2}};
  CHECK_THROWS_AS(merge_embedding_rows(t2, bad, w), ConfigError);
  const std::vector<int> out{0, 7};
  const std::vector<ClientRows> oob{{0, &out, &r0}, {1, &ids1, &r1}, {2, &ids2, &r2}};
  CHECK_THROWS_AS(merge_embedding_rows(t2, oob, w), ShapeError);
}

TEST_CASE("a one-client fedavg federation reproduces centralized SGD") {
  const Scene scene = small_scene(1, 3);
  const auto mode = make_mode(ModeName::fedavg);
  RoundConfig rc = small_rounds(11);
  rc.noise_sigma = 0.0;
  Federation fed(scene, mode, small_dims(scene), LossConfig{}, rc, CompressionConfig{}, Exec::serial);

  const Network net(small_dims(scene), mode.sharing);
  Rng init = make_stream(rc.seed, -1, 0, StreamPurpose::init);
  ParamSet params = net.init_params(init, {rc.init_scale});
  ParamSet velocity = params.zeros_like();
  for (int r = 0; r < 3; ++r) {
    fed.run_round();
    Rng shuffle = make_stream(rc.seed, 0, r, StreamPurpose::shuffle);
    centralized_epochs(net, params, velocity, scene.clients[0], rc.local_epochs, rc.batch_size, rc.lr,
                       rc.momentum, 1.0, 1.0, shuffle);
    CHECK(max_abs_diff(fed.server().global, params) < 1e-12);
    CHECK(max_abs_diff(fed.clients()[0].params, params) < 1e-12);
  }
}

TEST_CASE("kteps without the extra terms follows the CE-only two-branch trajectory") {
  const Scene scene = small_scene(1, 4);
  const auto mode = make_mode(ModeName::kteps);
  RoundConfig rc = small_rounds(12);
  rc.noise_sigma = 0.0;
  LossConfig loss;
  loss.lambda_kd = 0.0;
  loss.lambda_div = 0.0;
  Federation fed(scene, mode, small_dims(scene), loss, rc, CompressionConfig{}, Exec::serial);

  const Network net(small_dims(scene), mode.sharing);
  ParamSet params = test::federated_client_start(net, mode, rc);
  ParamSet velocity = params.zeros_like();
  for (int r = 0; r < 3; ++r) {
    fed.run_round();
    Rng shuffle = make_stream(rc.seed, 0, r, StreamPurpose::shuffle);
    centralized_epochs(net, params, velocity, scene.clients[0], rc.local_epochs, rc.batch_size, rc.lr,
                       rc.momentum, 1.0, 1.0, shuffle);
    CHECK(max_abs_diff(fed.clients()[0].params, params) < 1e-12);
  }
}

TEST_CASE("lossless compression leaves kteps unchanged") {
  const Scene scene = small_scene(3, 5);
  RoundConfig rc = small_rounds(13);
  rc.noise_sigma = 0.0;
  CompressionConfig cc;
  cc.d1 = 1;
  cc.d2 = 8;
  Federation plain(scene, make_mode(ModeName::kteps), small_dims(scene), LossConfig{}, rc, cc, Exec::serial);
  Federation star(scene, make_mode(ModeName::kteps_star), small_dims(scene), LossConfig{}, rc, cc, Exec::serial);
  for (int r = 0; r < 2; ++r) {
    plain.run_round();
    star.run_round();
    CHECK(max_abs_diff(plain.server().global, star.server().global) < 1e-8);
  }
}

TEST_CASE("individual mode never communicates") {
  const Scene scene = small_scene(2, 6);
  Federation fed(scene, make_mode(ModeName::individual), small_dims(scene), LossConfig{}, small_rounds(1),
                 CompressionConfig{}, Exec::serial);
  const ParamSet before = fed.clients()[1].params;
  const auto report = fed.run_round();
  CHECK(fed.server().global.empty());
  CHECK(report.upload_bytes == 0u);
  for (const auto& c : report.clients) CHECK(c.manifest.empty());
  CHECK(max_abs_diff(before, fed.clients()[1].params) > 0.0);
}

TEST_CASE("uploads never carry private components") {
  const Scene scene = small_scene(2, 7);
  for (auto m : {ModeName::fedavg, ModeName::fedper, ModeName::lg, ModeName::pfl_da, ModeName::kteps,
                 ModeName::kteps_star}) {
    for (auto arch : {Arch::standard, Arch::C}) {
      if (arch != Arch::standard && m != ModeName::kteps && m != ModeName::kteps_star) continue;
      const auto mode = make_mode(m, arch);
      CompressionConfig cc;
      cc.d2 = 6;
      Federation fed(scene, mode, small_dims(scene), LossConfig{}, small_rounds(2), cc, Exec::serial);
      const auto report = fed.run_round();
      std::set<std::string> allowed;
      for (std::size_t c = 0; c < kComponentCount; ++c) {
        if (!mode.sharing.shared(static_cast<Component>(c))) continue;
        for (const auto& n : component_tensor_names(static_cast<Component>(c))) allowed.insert(n);
      }
      if (mode.sharing.shared(Component::embedding)) {
        allowed.insert("embedding.rows");
        allowed.insert("embedding.pdr");
      }
      INFO("mode " << mode_name(m));
      for (const auto& c : report.clients) {
        CHECK_FALSE(c.manifest.empty());
        std::size_t bytes = 0;
        for (const auto& e : c.manifest) {
          CHECK(allowed.count(e.name) == 1u);
          bytes += e.bytes;
        }
        CHECK(bytes == c.upload_bytes);
      }
      for (const auto& t : fed.server().global.tensors()) CHECK(mode.sharing.shared(t.component));
    }
  }
}

TEST_CASE("compressed uploads are smaller and report the payload formula") {
  const Scene scene = small_scene(2, 8);
  CompressionConfig cc;
  cc.d1 = 2;
  cc.d2 = 5;
  Federation fed(scene, make_mode(ModeName::kteps_star), small_dims(scene), LossConfig{}, small_rounds(3), cc,
                 Exec::serial);
  const auto report = fed.run_round();
  for (const auto& c : report.clients) {
    const auto vk = scene.clients[static_cast<std::size_t>(c.client)].local_vocab.size();
    CHECK(c.embedding_floats == payload_float_count(vk, 8, 2, 5));
    CHECK(c.i_ser.has_value());
    CHECK(c.i_ag.has_value());
  }
}

TEST_CASE("client execution order cannot change results") {
  const Scene scene = small_scene(4, 9);
  for (auto m : {ModeName::fedavg, ModeName::kteps_star, ModeName::individual}) {
    Federation serial(scene, make_mode(m), small_dims(scene), LossConfig{}, small_rounds(4), {.d2 = 6},
                      Exec::serial);
    Federation parallel(scene, make_mode(m), small_dims(scene), LossConfig{}, small_rounds(4), {.d2 = 6},
                        Exec::parallel);
    test::ThreadScope threads(4);
    for (int r = 0; r < 2; ++r) {
      const auto a = serial.run_round();
      const auto b = parallel.run_round();
      CHECK(a.param_norm == b.param_norm);
      CHECK(a.upload_bytes == b.upload_bytes);
    }
    CHECK(bit_equal(serial.server().global, parallel.server().global));
    for (int k = 0; k < 4; ++k) CHECK(bit_equal(serial.clients()[k].params, parallel.clients()[k].params));
  }
}

TEST_CASE("round reports stay finite and weights follow client sizes") {
  SceneSpec spec;
  spec.clients = 2;
  spec.n_train = {30, 90};
  spec.n_test = {10};
  spec.max_len = 12;
  const Scene scene = generate_synthetic_scene(spec, 1);
  Federation fed(scene, make_mode(ModeName::kteps), small_dims(scene), LossConfig{}, small_rounds(5), {},
                 Exec::serial);
  CHECK(fed.server().weights == std::vector<double>{0.25, 0.75});
  for (int r = 0; r < 2; ++r) {
    const auto rep = fed.run_round();
    CHECK(rep.round == r);
    CHECK(std::isfinite(rep.param_norm));
    for (const auto& c : rep.clients) CHECK(std::isfinite(c.loss.total));
  }
  CHECK(fed.round() == 2);
}

TEST_CASE("federation configuration checks") {
  const Scene scene = small_scene(2, 10);
  RoundConfig bad = small_rounds(1);
  bad.momentum = 1.0;
  CHECK_THROWS_AS(Federation(scene, make_mode(ModeName::fedavg), small_dims(scene), LossConfig{}, bad, {}),
                  ConfigError);
  ModelDims wrong = small_dims(scene);
  wrong.vocab += 1;
  CHECK_THROWS_AS(Federation(scene, make_mode(ModeName::fedavg), wrong, LossConfig{}, small_rounds(1), {}),
                  ConfigError);
  CompressionConfig cc;
  cc.d1 = 0;
  CHECK_THROWS_AS(Federation(scene, make_mode(ModeName::kteps_star), small_dims(scene), LossConfig{},
                             small_rounds(1), cc),
                  ConfigError);
  RoundConfig b1 = small_rounds(1);
  b1.batch_size = 1;
  CHECK_THROWS_AS(Federation(scene, make_mode(ModeName::kteps), small_dims(scene), LossConfig{}, b1, {}),
                  ConfigError);
}
