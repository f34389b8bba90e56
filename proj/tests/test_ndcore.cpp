#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "volimp/optim.hpp"
#include "volimp/rng.hpp"
#include "volimp/tape.hpp"
#include "volimp/tensor.hpp"

using namespace volimp;
using nd::Tape;
using nd::Tensor;
using nd::Var;

TEST_CASE("tensor shape contract") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("rng streams are deterministic and split cleanly") {
  nd::RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  nd::RngStream c1 = nd::RngStream(42).child("x");
  nd::RngStream c2 = nd::RngStream(42).child("y");
  CHECK(c1.next_u64() != c2.next_u64());

  // uniform moments
  nd::RngStream u(7);
  double mean = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) mean += u.uniform();
  mean /= n;
  CHECK(std::abs(mean - 0.5) < 0.005);

  // normal moments
  nd::RngStream g(8);
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = g.normal();
    m1 += z;
    m2 += z * z;
  }
  CHECK(std::abs(m1 / n) < 0.01);
  CHECK(std::abs(m2 / n - 1.0) < 0.02);
}

TEST_CASE("affine matches hand arithmetic") {
  Tape t;
  SUBCASE("identity") {
    Var x = t.input(Tensor::matrix(1, 2, {1, 2}));
    Var w = t.input(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Var b = t.input(Tensor({2}));
    Var y = nd::affine(t, x, w, b);
    CHECK(t.val(y).at(0, 0) == 1.0);
    CHECK(t.val(y).at(0, 1) == 2.0);
  }
  SUBCASE("single output") {
    Var x = t.input(Tensor::matrix(1, 2, {1, 1}));
    Var w = t.input(Tensor::matrix(1, 2, {2, 3}));
    Var b = t.input(Tensor({1}, {1}));
    Var y = nd::affine(t, x, w, b);
    CHECK(t.val(y).item() == 6.0);
  }
  SUBCASE("shape mismatch") {
    Var x = t.input(Tensor::matrix(1, 3, {1, 1, 1}));
    Var w = t.input(Tensor::matrix(1, 2, {2, 3}));
    Var b = t.input(Tensor({1}, {1}));
    CHECK_THROWS_AS(nd::affine(t, x, w, b), DimensionError);
  }
}

TEST_CASE("affine gradient vs central differences") {
  nd::RngStream rng(3);
  Tensor x = nd::normal_tensor(rng, {3, 4});
  Tensor w = nd::normal_tensor(rng, {2, 4});
  Tensor b = nd::normal_tensor(rng, {2});
  const double err = nd::gradcheck_multi(
      [](Tape& t, const std::vector<Var>& vs) {
        return nd::sum_all(t, nd::affine(t, vs[0], vs[1], vs[2]));
      },
      {x, w, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("swish values") {
  Tape t;
  Var x = t.input(Tensor({3}, {0.0, 1.0, -30.0}));
  const Tensor& y = t.val(nd::swish(t, x));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(y[2] == doctest::Approx(-2.8e-12).epsilon(0.05));
  CHECK(std::isfinite(y[2]));
}

TEST_CASE("softplus values and overflow safety") {
  Tape t;
  Var x = t.input(Tensor({3}, {0.0, 5.0, 100.0}));
  const Tensor& y = t.val(nd::softplus(t, x));
  CHECK(y[0] == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(5.006715).epsilon(1e-6));
  CHECK(y[2] == 100.0);
}

TEST_CASE("softplus and swish stay finite over a wide input range") {
  Tape t;
  Var x = t.input(Tensor({4}, {-1e4, -17.5, 17.5, 1e4}));
  CHECK(t.val(nd::softplus(t, x)).all_finite());
  CHECK(t.val(nd::swish(t, x)).all_finite());
}

TEST_CASE("layer_norm") {
  SUBCASE("constant row maps to shift") {
    Tape t;
    Var x = t.input(Tensor::matrix(1, 4, {3, 3, 3, 3}));
    Var g = t.input(Tensor::full({4}, 1.0));
    Var s = t.input(Tensor({4}));
    const Tensor& y = t.val(nd::layer_norm(t, x, g, s));
    for (int j = 0; j < 4; ++j) CHECK(std::abs(y.at(0, j)) < 1e-9);
  }
  SUBCASE("two-point row normalizes to unit variance") {
    Tape t;
    Var x = t.input(Tensor::matrix(1, 2, {1, -1}));
    Var g = t.input(Tensor::full({2}, 1.0));
    Var s = t.input(Tensor({2}));
    const Tensor& y = t.val(nd::layer_norm(t, x, g, s));
    CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));
  }
  SUBCASE("h must be at least 2") {
    Tape t;
    Var x = t.input(Tensor::matrix(2, 1, {1, 2}));
    Var g = t.input(Tensor::full({1}, 1.0));
    Var s = t.input(Tensor({1}));
    CHECK_THROWS_AS(nd::layer_norm(t, x, g, s), DimensionError);
  }
  SUBCASE("gradient") {
    nd::RngStream rng(5);
    Tensor x = nd::normal_tensor(rng, {2, 8});
    Tensor g = nd::uniform_tensor(rng, {8}, 0.5, 1.5);
    Tensor s = nd::normal_tensor(rng, {8});
    const double err = nd::gradcheck_multi(
        [](Tape& t, const std::vector<Var>& vs) {
          Var y = nd::layer_norm(t, vs[0], vs[1], vs[2]);
          return nd::sum_all(t, nd::mul(t, y, y));
        },
        {x, g, s}, 1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("dropout") {
  nd::RngStream rng(9);
  SUBCASE("rate 0 is identity") {
    Tape t;
    Tensor x = nd::normal_tensor(rng, {4, 4});
    Var xv = t.input(x);
    const Tensor& y = t.val(nd::dropout(t, xv, 0.0, true, rng));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("eval mode is identity") {
    Tape t;
    Tensor x = nd::normal_tensor(rng, {4, 4});
    Var xv = t.input(x);
    const Tensor& y = t.val(nd::dropout(t, xv, 0.4, false, rng));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("empirical drop fraction") {
    Tape t;
    Var xv = t.input(Tensor::full({1000, 1000}, 1.0));
    const Tensor& y = t.val(nd::dropout(t, xv, 0.3, true, rng));
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) zeros += y[i] == 0.0;
    const double frac = static_cast<double>(zeros) / static_cast<double>(y.size());
    CHECK(frac == doctest::Approx(0.3).epsilon(0.0067));  // 0.3 +- 0.002
    // survivors scaled by 1/(1-rate)
    for (std::size_t i = 0; i < 100; ++i) {
      if (y[i] != 0.0) CHECK(y[i] == doctest::Approx(1.0 / 0.7));
    }
  }
  SUBCASE("rate must be below 1") {
    Tape t;
    Var xv = t.input(Tensor::full({2}, 1.0));
    CHECK_THROWS_AS(nd::dropout(t, xv, 1.0, true, rng), ParameterError);
  }
}

TEST_CASE("adam_step") {
  auto one_param_state = [](Tensor& p, double wd) {
    return nd::AdamState({&p}, nd::AdamConstants{}, wd);
  };
  SUBCASE("zero grads leave params, bump t") {
    Tensor p = Tensor({3}, {1, 2, 3});
    nd::AdamState st = one_param_state(p, 0.0);
    std::vector<Tensor*> ps{&p};
    adam_step(ps, {Tensor({3})}, st, 0.1, {"p"});
    CHECK(p[0] == 1.0);
    CHECK(p[2] == 3.0);
    CHECK(st.step_count() == 1);
  }
  SUBCASE("first step moves by about -lr") {
    Tensor p = Tensor({1});
    nd::AdamState st = one_param_state(p, 0.0);
    std::vector<Tensor*> ps{&p};
    adam_step(ps, {Tensor({1}, {1.0})}, st, 0.1, {"p"});
    CHECK(std::abs(p[0] + 0.1) < 1e-6);
  }
  SUBCASE("decoupled decay") {
    Tensor p = Tensor({1}, {1.0});
    nd::AdamState st = one_param_state(p, 1e-5);
    std::vector<Tensor*> ps{&p};
    adam_step(ps, {Tensor({1})}, st, 0.1, {"p"});
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 1e-5).epsilon(1e-14));
  }
  SUBCASE("non-finite grad names the parameter") {
    Tensor p = Tensor({1});
    nd::AdamState st = one_param_state(p, 0.0);
    std::vector<Tensor*> ps{&p};
    Tensor g({1}, {std::numeric_limits<double>::quiet_NaN()});
    try {
      adam_step(ps, {g}, st, 0.1, {"enc.in.w"});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("enc.in.w") != std::string::npos);
    }
  }
}

TEST_CASE("lr schedule") {
  nd::LrSchedule s;  // defaults: 1e-7 -> 2e-4 over 5k, halve after 50k
  CHECK(nd::lr_at(s, 0) == 1e-7);
  CHECK(nd::lr_at(s, 5000) == 2e-4);
  CHECK(nd::lr_at(s, 30000) == 2e-4);
  CHECK(nd::lr_at(s, 50000) == 2e-4);
  CHECK(nd::lr_at(s, 50001) == doctest::Approx(1e-4).epsilon(1e-12));

  SUBCASE("monotone on warmup, constant per regime") {
    nd::RngStream rng(10);
    for (int trial = 0; trial < 50; ++trial) {
      nd::LrSchedule r;
      r.warmup_start = rng.uniform() * 1e-5;
      r.warmup_end = r.warmup_start + rng.uniform() * 1e-3;
      r.warmup_steps = 1 + static_cast<std::int64_t>(rng.uniform() * 1000);
      r.decay_step = r.warmup_steps + 1 + static_cast<std::int64_t>(rng.uniform() * 1000);
      r.decay_factor = rng.uniform();
      double prev = nd::lr_at(r, 0);
      CHECK(prev == r.warmup_start);
      for (std::int64_t step = 1; step <= r.warmup_steps; ++step) {
        const double cur = nd::lr_at(r, step);
        CHECK(cur >= prev);
        prev = cur;
      }
      CHECK(nd::lr_at(r, r.decay_step) == r.warmup_end);
      CHECK(nd::lr_at(r, r.decay_step + 1) == nd::lr_at(r, r.decay_step + 1000));
    }
  }
}

TEST_CASE("gradcheck harness") {
  SUBCASE("exact quadratic") {
    const double err = nd::gradcheck(
        [](Tape& t, Var x) { return nd::sum_all(t, nd::square(t, x)); },
        Tensor({3}, {1, 2, 3}), 1e-5);
    CHECK(err < 1e-8);
  }
  SUBCASE("constant function has zero gradient") {
    const double err = nd::gradcheck(
        [](Tape& t, Var x) {
          return nd::add_const(t, nd::scale(t, nd::sum_all(t, x), 0.0), 3.0);
        },
        Tensor({4}, {1, 2, 3, 4}), 1e-5);
    CHECK(err == 0.0);
  }
}

TEST_CASE("logsumexp is stable and differentiable") {
  Tape t;
  Var a = t.input(Tensor::matrix(1, 2, {0.0, -1000.0}));
  CHECK(t.val(nd::logsumexp_rows(t, a)).item() == doctest::Approx(0.0).epsilon(1e-12));

  nd::RngStream rng(11);
  const double err = nd::gradcheck(
      [](Tape& tt, Var x) { return nd::sum_all(tt, nd::logsumexp_rows(tt, x)); },
      nd::normal_tensor(rng, {3, 5}), 1e-6);
  CHECK(err < 1e-7);
}

TEST_CASE("non-finite op outputs raise NumericError") {
  Tape t;
  Var x = t.input(Tensor({1}, {-1.0}));
  CHECK_THROWS_AS(nd::log_e(t, x), NumericError);
}
