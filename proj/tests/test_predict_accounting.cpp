#include "doctest.h"
#include "ktsim/accounting.hpp"
#include "ktsim/error.hpp"
#include "ktsim/metrics.hpp"
#include "ktsim/predict.hpp"

using namespace ktsim;

// Exact values come from tests/oracles/predict_values.py.
TEST_CASE("closed forms evaluate exactly") {
  CHECK(predict::akm(1, 10).exact == "1023/1024");
  CHECK(predict::akm(1, 10).value == doctest::Approx(0.9990234375).epsilon(1e-15));
  CHECK(predict::akm_general_owner(2, 2, 4).exact == "544/625");
  CHECK(predict::akm_general_owner(2, 2, 4).value == doctest::Approx(0.8704));
  CHECK(predict::akm_general_any(2, 2, 4).exact == "9999/10000");
  CHECK(predict::akm_churn({2, 2, 2, 2, 2}, {false, true, true, false, false}).exact == "26/27");
  CHECK(predict::ktaca(50, 1).exact == "49/50");
  CHECK(predict::ktaca(50, 3).exact == "124999/125000");
  CHECK(predict::ktaca(1, 1).value == 0.0);
  const auto b = predict::ktca_bound(5, 1.0);
  CHECK(b.value == 12.0);
  CHECK_FALSE(b.probability);
}

TEST_CASE("predict dispatch and parameter parsing") {
  const auto p = predict::parse_params("c=1,m=10");
  CHECK(p.at("c") == "1");
  CHECK(predict::evaluate("AKM", p).exact == "1023/1024");
  CHECK(predict::evaluate("AKM-general", predict::parse_params("f=2,r=2,m=4,detector=any"))
            .exact == "9999/10000");
  CHECK(predict::evaluate("AKM-churn", predict::parse_params("c=2,m=5,owner_offline=1;2")).exact ==
        "26/27");
  CHECK(predict::evaluate("KTACA", predict::parse_params("N=1")).value == 0.0);
  CHECK(predict::evaluate("KTCA", predict::parse_params("diam=2,delta=1")).value == 6.0);
  CHECK_THROWS_AS(predict::evaluate("PIR", {}), Unsupported);
  CHECK_THROWS_AS(predict::evaluate("AKM", predict::parse_params("c=1")), ConfigInvalid);
  CHECK_THROWS_AS(predict::evaluate("AKM", predict::parse_params("c=x,m=2")), ConfigInvalid);
  CHECK_THROWS_AS(predict::parse_params("c"), ConfigInvalid);
}

TEST_CASE("accounting golden values") {
  const auto r = accounting::closed_form({});
  CHECK(r.get("KTCA", "str_and_poi_per_epoch") == 736);
  CHECK(r.get("KTCA", "str_exchange_per_epoch") == 6400);
  CHECK(r.get("KTCA", "per_epoch") == 7136);
  CHECK(r.get("KTCA", "poi_lookup") == 1056);
  CHECK(r.get("KTCA", "monthly") == 220416);
  CHECK(r.get("KTCA", "memory") == 104);
  CHECK(r.get("KTACA", "per_epoch") == 33952);
  CHECK(r.get("KTACA", "monthly_published_rounding") == 30 * 33960 + 6 * 1056);
  CHECK(r.get("AKM", "per_new_connection") == 320000);
  CHECK_FALSE(r.notes.empty());
  CHECK_THROWS(r.get("KTCA", "nope"));
  CHECK(accounting::log2_ceil(1) == 0);
  CHECK(accounting::log2_ceil(2097152) == 21);
  CHECK(accounting::log2_ceil(2097153) == 22);
}

TEST_CASE("Wilson interval") {
  auto [lo, hi] = metrics::wilson(9991, 10000);
  CHECK(lo == doctest::Approx(0.9979289997908019).epsilon(1e-12));
  CHECK(hi == doctest::Approx(0.9996091439652586).epsilon(1e-12));
  std::tie(lo, hi) = metrics::wilson(50, 100);
  CHECK(lo == doctest::Approx(0.37527962504483986).epsilon(1e-12));
  CHECK(hi == doctest::Approx(0.6247203749551601).epsilon(1e-12));
  std::tie(lo, hi) = metrics::wilson(0, 1000);
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(0.006591164903406826).epsilon(1e-12));
}

TEST_CASE("predict rejects unknown or malformed parameters") {
  using ktsim::ConfigInvalid;
  using ktsim::predict::evaluate;
  CHECK_THROWS_AS(evaluate("AKM", {{"c", "1"}, {"m", "10"}, {"n", "3"}}), ConfigInvalid);
  CHECK_THROWS_AS(evaluate("AKM-churn", {{"c", "2"}, {"offline", "1"}}), ConfigInvalid);
  CHECK_THROWS_AS(evaluate("KTCA", {{"diam", "4"}, {"delta", "1ms"}}), ConfigInvalid);
  CHECK(evaluate("KTCA", {{"diam", "4"}, {"delta", "0.5"}}).value == doctest::Approx(5.0));
}
