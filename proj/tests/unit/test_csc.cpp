#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mtc/csc.hpp"
#include "oracles.hpp"

using namespace mtc;

namespace {

SensingZoneSnapshot zone_from_gaps(const std::vector<double>& gaps, double zone = 1000) {
  SensingZoneSnapshot z;
  z.zone_length = zone;
  double x = 0;
  for (double g : gaps) {
    x += g + 5.0;
    z.entries.push_back({x, 0.0});
  }
  return z;
}

void enumerate(int n, const std::vector<double>& values, std::vector<double>& cur,
               const std::function<void(const std::vector<double>&)>& f) {
  if (static_cast<int>(cur.size()) == n) {
    f(cur);
    return;
  }
  for (double v : values) {
    cur.push_back(v);
    enumerate(n, values, cur, f);
    cur.pop_back();
  }
}

}  // namespace

TEST_CASE("rule label examples") {
  CHECK(label_gaps({4, 7, 11}) == CongestionStage::Leaving);
  CHECK(label_gaps({12, 8, 5}) == CongestionStage::Forming);
  CHECK(label_gaps({20, 18, 22}) == CongestionStage::FreeFlow);
  CHECK(label_gaps({6, 9, 4}) == CongestionStage::Congested);
  CHECK(label_gaps({6, 20, 4}) == CongestionStage::Undefined);
  CHECK(label_gaps({6}) == CongestionStage::Undefined);
  CHECK(label_gaps({}) == CongestionStage::Undefined);
  CHECK(label_window(zone_from_gaps({4, 7, 11})) == CongestionStage::Leaving);
}

TEST_CASE("exhaustive gap patterns against the brute-force rule") {
  const std::vector<double> values{2.0, 6.0, 6.05, 6.2, 14.9, 15.0, 15.1, 22.0, 30.0};
  long n = 0;
  for (int vehicles : {3, 4}) {
    std::vector<double> cur;
    enumerate(vehicles, values, cur, [&](const std::vector<double>& g) {
      ++n;
      REQUIRE(static_cast<int>(label_gaps(g)) == oracle::label(g));
    });
  }
  CHECK(n == 9 * 9 * 9 + 9 * 9 * 9 * 9);
}

// Positions are cumulative, so gaps come back with rounding; keep clear of
// the tolerance and threshold edges here.
TEST_CASE("exhaustive zone windows against the brute-force rule") {
  const std::vector<double> values{2.0, 6.0, 6.05, 6.3, 14.85, 15.3, 22.0, 30.0};
  for (int vehicles : {3, 4}) {
    std::vector<double> cur;
    enumerate(vehicles, values, cur, [&](const std::vector<double>& g) {
      REQUIRE(static_cast<int>(label_window(zone_from_gaps(g))) == oracle::label(g));
    });
  }
}

TEST_CASE("stage names and one-hot") {
  for (int k = 0; k < kStageCount; ++k) {
    const auto s = static_cast<CongestionStage>(k);
    CHECK(parse_stage(to_string(s)) == s);
    const auto h = onehot(s);
    double sum = 0;
    for (double x : h) sum += x;
    CHECK(sum == 1.0);
    CHECK(h[k] == 1.0);
  }
}

TEST_CASE("features are padded and masked") {
  FeatureSpec spec;
  SensingZoneSnapshot z;
  z.entries = {{10, 1.0}, {25, -2.0}};
  const auto f = zone_features(z, spec);
  REQUIRE(f.size() == 24);
  CHECK(f[0] == doctest::Approx(0.2));
  CHECK(f[1] == doctest::Approx(1.0 / spec.speed_limit));
  CHECK(f[16] == 1.0);
  CHECK(f[17] == 1.0);
  CHECK(f[18] == 0.0);
  CHECK(f[23] == 0.0);
}

TEST_CASE("zero network is uniform and softmax sums to one") {
  Mlp net({24, 32, 32, 5});
  const auto p = softmax(net.forward(std::vector<double>(24, 0.3)));
  for (double x : p) CHECK(x == doctest::Approx(0.2));
  Rng r(1);
  auto m = Mlp::random({24, 16, 5}, r);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(24);
    for (auto& v : x) v = u(r);
    const auto q = softmax(m.forward(x));
    double s = 0;
    for (double v : q) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK(argmax({1, 3, 3, 0}) == 1);
}

TEST_CASE("backprop matches central differences") {
  Rng r(5);
  auto net = Mlp::random({24, 32, 32, 5}, r);
  for (auto& b : net.params()) b += 0.01;  // keep units away from the kink
  Dataset d;
  d.n_features = 24;
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x(24);
    for (auto& v : x) v = u(r);
    d.push(x, i % 5, 0);
  }
  std::vector<std::size_t> rows(10);
  for (std::size_t i = 0; i < 10; ++i) rows[i] = i;
  std::vector<double> grad;
  loss_and_gradient(net, d, rows, grad);
  const double eps = 1e-5;
  int checked = 0;
  double worst = 0;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    const double keep = net.params()[k];
    std::vector<double> g2;
    net.params()[k] = keep + eps;
    const double up = loss_and_gradient(net, d, rows, g2);
    net.params()[k] = keep - eps;
    const double dn = loss_and_gradient(net, d, rows, g2);
    net.params()[k] = keep;
    const double fd = (up - dn) / (2 * eps);
    const double scale = std::max({std::abs(fd), std::abs(grad[k]), 1e-4});
    worst = std::max(worst, std::abs(fd - grad[k]) / scale);
    ++checked;
  }
  CHECK(checked == static_cast<int>(net.params().size()));
  CHECK(worst < 1e-6);
}

TEST_CASE("separable data is learned and training is reproducible") {
  Dataset train, test;
  train.n_features = test.n_features = 24;
  Rng r(9);
  std::normal_distribution<double> n(0, 0.3);
  for (int i = 0; i < 400; ++i) {
    std::vector<double> x(24);
    for (auto& v : x) v = n(r);
    const int y = i % 2;
    x[0] += y ? 1.5 : -1.5;
    (i < 300 ? train : test).push(x, y == 0 ? 0 : 3, i);
  }
  TrainOptions opt;
  opt.seed = 4;
  opt.epochs = 400;
  Rng a(2), b(2);
  auto m1 = Mlp::random({24, 32, 32, 5}, a);
  auto m2 = Mlp::random({24, 32, 32, 5}, b);
  const auto r1 = train_classifier(m1, train, test, opt);
  const auto r2 = train_classifier(m2, train, test, opt);
  CHECK(r1.train_accuracy >= 0.99);
  CHECK(m1.params() == m2.params());
  REQUIRE(r1.epoch_loss.size() == 400);
  // smoothed loss does not climb
  auto avg = [&](std::size_t i) {
    double s = 0;
    for (std::size_t k = i; k < i + 5; ++k) s += r1.epoch_loss[k];
    return s / 5;
  };
  CHECK(avg(395) <= avg(0));
}

TEST_CASE("dataset fence post and zero offset") {
  EpisodeSchedule s;
  s.warmup_steps = 0;
  s.horizon_steps = 99;
  s.measurement_window_s = 1;
  auto t = run_episode(RingScenario::from_density(120), {}, s, 3);
  REQUIRE(t.snapshots.size() == 100);
  DatasetOptions opt;
  opt.observers_per_trace = 2;
  const auto d = make_dataset({t}, opt);
  CHECK(d.size() == 2 * 90);
  opt.forecast_offset = 0;
  const auto z = make_dataset({t}, opt);
  CHECK(z.size() == 2 * 100);
  // offset 0: the label is the rule label of the same snapshot
  int agree = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double* f = z.row(i);
    // rebuild the zone from the features
    SensingZoneSnapshot zz;
    zz.zone_length = opt.zone_length;
    for (int k = 0; k < opt.features.max_vehicles; ++k) {
      if (f[2 * opt.features.max_vehicles + k] > 0) {
        zz.entries.push_back({f[2 * k] * opt.zone_length, f[2 * k + 1] * opt.features.speed_limit});
      }
    }
    agree += static_cast<int>(label_window(zz, opt.labels)) == z.y[i];
  }
  CHECK(agree == static_cast<int>(z.size()));
}

TEST_CASE("balancing evens out classes") {
  Dataset d;
  d.n_features = 1;
  for (int i = 0; i < 1000; ++i) d.push({double(i)}, 0, i % 7);
  for (int i = 0; i < 300; ++i) d.push({double(i)}, 2, i % 7);
  for (int i = 0; i < 150; ++i) d.push({double(i)}, 3, i % 7);
  for (int i = 0; i < 20; ++i) d.push({double(i)}, 4, i % 7);
  const auto b = balance(d, 1, 100);
  const auto c = b.class_counts();
  CHECK(c[0] == 150);
  CHECK(c[2] == 150);
  CHECK(c[3] == 150);
  CHECK(c[4] == 0);
  Dataset train, test;
  split_by_episode(d, 0.3, 1, train, test);
  CHECK(train.size() + test.size() == d.size());
  for (int e : test.episode) {
    for (int f : train.episode) REQUIRE(e != f);
  }
}

TEST_CASE("model json round trip and empty zones") {
  Rng r(3);
  auto m = CscModel::create({}, {32, 32}, r);
  const auto back = CscModel::from_json(m.to_json());
  SensingZoneSnapshot z;
  z.entries = {{8, -1}, {20, 0.5}, {33, 0.1}};
  const auto p1 = m.probabilities(z), p2 = back.probabilities(z);
  for (std::size_t k = 0; k < p1.size(); ++k) CHECK(p1[k] == p2[k]);
  CHECK(m.forecast(z) == back.forecast(z));
  SensingZoneSnapshot empty;
  const int s = static_cast<int>(m.forecast(empty));
  CHECK(s >= 0);
  CHECK(s < kStageCount);
  CHECK_THROWS_AS(CscModel::from_json("{\"net\": 3}"), IoError);
}
