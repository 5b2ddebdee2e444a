// Record-ledger and sampling tests: classification lifecycle with worked
// examples, drawing priorities and frequencies, label reversal, the removal
// ablation filter, and the variance-based miner.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "ufnrec/negatives.hpp"

using namespace ufnrec;
using namespace ufnrec::negatives;

namespace {

Observation obs(int user, int t, int item, int positive, double neg_score, double pos_score) {
    Observation o;
    o.user = user;
    o.t = t;
    o.item = item;
    o.positive = positive;
    o.neg_score = neg_score;
    o.pos_score = pos_score;
    return o;
}

// One epoch where `item` either outscores (win) or trails its positive.
std::vector<Observation> epoch_for(int item, bool win) {
    return {obs(0, 0, item, 1, win ? 2.0 : 0.0, 1.0)};
}

}  // namespace

TEST_CASE("cumulative counting survives a miss: wins on epochs 1,2,4 reach m=3") {
    RecordLedger led;
    led.m = 3;
    led.count_mode = CountMode::cumulative;

    CHECK(led.record_epoch(epoch_for(7, true)).empty());   // count 1
    CHECK(led.rec_set(0, 0) != nullptr);
    CHECK(led.record_epoch(epoch_for(7, true)).empty());   // count 2
    CHECK(led.record_epoch(epoch_for(7, false)).empty());  // miss keeps the count
    CHECK(led.counts.at({0, 0, 7}) == 2);
    CHECK(led.rec_set(0, 0) == nullptr);  // but the item leaves N_rec

    auto newly = led.record_epoch(epoch_for(7, true));  // count 3 -> classified
    REQUIRE(newly.size() == 1);
    CHECK(newly[0] == LedgerKey{0, 0, 7});
    CHECK(led.is_false(0, 0, 7));
    CHECK(led.false_total() == 1);
    CHECK(led.rec_total() == 0);

    // Once classified, further observations of the same item are ignored.
    CHECK(led.record_epoch(epoch_for(7, true)).empty());
    CHECK(led.counts.at({0, 0, 7}) == 3);
}

TEST_CASE("consecutive counting resets on a miss") {
    RecordLedger led;
    led.m = 3;
    led.count_mode = CountMode::consecutive;

    led.record_epoch(epoch_for(7, true));
    led.record_epoch(epoch_for(7, true));
    led.record_epoch(epoch_for(7, false));  // reset
    CHECK(led.counts.at({0, 0, 7}) == 0);
    led.record_epoch(epoch_for(7, true));
    CHECK_FALSE(led.is_false(0, 0, 7));  // only 1 consecutive win so far
    led.record_epoch(epoch_for(7, true));
    auto newly = led.record_epoch(epoch_for(7, true));
    REQUIRE(newly.size() == 1);
    CHECK(led.is_false(0, 0, 7));
}

TEST_CASE("only strict outscoring counts; ties are not wins") {
    RecordLedger led;
    led.m = 1;
    led.record_epoch({obs(0, 0, 5, 1, 1.0, 1.0)});  // tie
    CHECK(led.counts.count({0, 0, 5}) == 0);
    CHECK_FALSE(led.is_false(0, 0, 5));
    led.record_epoch({obs(0, 0, 5, 1, 1.0 + 1e-12, 1.0)});  // any strict margin
    CHECK(led.is_false(0, 0, 5));
}

TEST_CASE("an observation whose item equals its positive is fatal") {
    RecordLedger led;
    CHECK_THROWS(led.record_epoch({obs(2, 3, 9, 9, 2.0, 1.0)}));
    CHECK_THROWS(led.record_epoch({obs(2, 3, 9, 9, 0.0, 1.0)}));  // even a loss
}

TEST_CASE("record threshold must be positive") {
    RecordLedger led;
    led.m = 0;
    CHECK_THROWS(led.record_epoch({}));
}

TEST_CASE("N_rec always reflects exactly the most recent epoch's outscorers") {
    RecordLedger led;
    led.m = 10;  // keep everything sub-threshold
    led.record_epoch({obs(0, 0, 3, 1, 2.0, 1.0), obs(0, 0, 4, 1, 2.0, 1.0),
                      obs(1, 2, 8, 5, 2.0, 1.0)});
    REQUIRE(led.rec_set(0, 0) != nullptr);
    CHECK(*led.rec_set(0, 0) == std::vector<int>{3, 4});
    REQUIRE(led.rec_set(1, 2) != nullptr);
    CHECK(*led.rec_set(1, 2) == std::vector<int>{8});

    // Next epoch only item 4 wins; 3 and 8 drop out of N_rec but keep counts.
    led.record_epoch({obs(0, 0, 4, 1, 2.0, 1.0)});
    REQUIRE(led.rec_set(0, 0) != nullptr);
    CHECK(*led.rec_set(0, 0) == std::vector<int>{4});
    CHECK(led.rec_set(1, 2) == nullptr);
    CHECK(led.counts.at({0, 0, 3}) == 1);
    CHECK(led.counts.at({1, 2, 8}) == 1);
}

TEST_CASE("ledger replay is deterministic regardless of observation order") {
    std::vector<std::vector<Observation>> epochs = {
        {obs(0, 0, 3, 1, 2.0, 1.0), obs(0, 1, 6, 2, 3.0, 1.0), obs(1, 0, 3, 4, 2.5, 1.0)},
        {obs(0, 1, 6, 2, 3.0, 1.0), obs(0, 0, 3, 1, 0.5, 1.0)},
        {obs(0, 1, 6, 2, 3.0, 1.0), obs(1, 0, 3, 4, 2.5, 1.0)},
    };
    RecordLedger a, b;
    a.m = b.m = 2;
    for (auto& e : epochs) a.record_epoch(e);
    for (auto e : epochs) {
        std::reverse(e.begin(), e.end());  // shuffled input, same outcome
        b.record_epoch(e);
    }
    CHECK(a.dump_lines() == b.dump_lines());
    CHECK(a.counts == b.counts);
    CHECK(a.rec == b.rec);
    CHECK(a.falses == b.falses);
    CHECK(a.is_false(0, 1, 6));
}

TEST_CASE("mark_false removes the item from N_rec and records it in the dump") {
    RecordLedger led;
    led.m = 5;
    led.record_epoch({obs(0, 0, 3, 1, 2.0, 1.0), obs(0, 0, 9, 1, 2.0, 1.0)});
    led.mark_false(0, 0, 3);
    CHECK(led.is_false(0, 0, 3));
    REQUIRE(led.rec_set(0, 0) != nullptr);
    CHECK(*led.rec_set(0, 0) == std::vector<int>{9});
    CHECK(led.false_total() == 1);

    std::string dump = led.dump_lines();
    CHECK(dump == "0\t0\t3\t1\tFALSE\n0\t0\t9\t1\tREC\n");

    // Marking an item never observed still produces a dump row (count 0).
    led.mark_false(2, 1, 4);
    CHECK(led.dump_lines() ==
          "0\t0\t3\t1\tFALSE\n0\t0\t9\t1\tREC\n2\t1\t4\t0\tFALSE\n");
}

TEST_CASE("draw_negatives serves N_rec members before uniform fills") {
    RecordLedger led;
    led.m = 10;
    led.record_epoch({obs(0, 0, 7, 1, 2.0, 1.0)});
    Rng rng(123);
    auto out = draw_negatives(led, 0, 0, 3, 50, {1}, rng);
    REQUIRE(out.size() == 3);
    CHECK(std::find(out.begin(), out.end(), 7) != out.end());
    std::set<int> uniq(out.begin(), out.end());
    CHECK(uniq.size() == 3);
    for (int item : out) {
        CHECK(item >= 1);
        CHECK(item <= 50);
        CHECK(item != 1);  // exclusion honored even for fills
    }

    // A context with no records draws purely uniform.
    auto plain = draw_negatives(led, 5, 5, 2, 50, {}, rng);
    CHECK(plain.size() == 2);
}

TEST_CASE("draw_negatives caps N_rec by count with index tie-breaks") {
    RecordLedger led;
    led.m = 10;
    // Build counts via three epochs: item 9 wins 3x, items 3 and 7 win 2x,
    // item 5 wins once; all currently in N_rec after the last epoch.
    for (int e = 0; e < 3; ++e) {
        std::vector<Observation> o;
        o.push_back(obs(0, 0, 9, 1, 2.0, 1.0));
        if (e >= 1) {
            o.push_back(obs(0, 0, 3, 1, 2.0, 1.0));
            o.push_back(obs(0, 0, 7, 1, 2.0, 1.0));
        }
        if (e == 2) o.push_back(obs(0, 0, 5, 1, 2.0, 1.0));
        led.record_epoch(o);
    }
    REQUIRE(led.rec_set(0, 0)->size() == 4);

    Rng rng(7);
    auto out = draw_negatives(led, 0, 0, 2, 50, {}, rng);
    // Highest count is 9 (3 wins); 3 and 7 tie at 2 wins -> item index picks 3.
    CHECK(out == std::vector<int>{3, 9});
}

TEST_CASE("draws never return the padding id, exclusions, or classified items") {
    RecordLedger led;
    led.m = 1;
    led.record_epoch({obs(0, 0, 4, 2, 2.0, 1.0)});  // immediately classified
    REQUIRE(led.is_false(0, 0, 4));

    std::set<int> exclusions = {1, 2, 3};
    for (uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        auto out = draw_negatives(led, 0, 0, 2, 8, exclusions, rng);
        for (int item : out) {
            CHECK(item != 0);
            CHECK(item != 4);
            CHECK(exclusions.count(item) == 0);
        }
    }
}

TEST_CASE("uniform fills are uniform and N_rec members always appear") {
    RecordLedger led;
    led.m = 10;
    led.record_epoch({obs(0, 0, 7, 1, 2.0, 1.0)});
    const int vocab = 200;
    const int n_draws = 10000;
    std::map<int, int> freq;
    for (int i = 0; i < n_draws; ++i) {
        Rng rng(mix_seed(900, {static_cast<uint64_t>(i)}));
        auto out = draw_negatives(led, 0, 0, 2, vocab, {1}, rng);
        REQUIRE(out.size() == 2);
        CHECK(out[0] == 7);  // the recorded member leads every draw
        ++freq[out[1]];
    }
    // The fill is uniform over the 197 eligible items (not 0, 1, or 7).
    CHECK(freq.count(1) == 0);
    CHECK(freq.count(7) == 0);
    double p = 1.0 / 197.0;
    double mean = n_draws * p;
    double sd = std::sqrt(n_draws * p * (1 - p));
    for (auto& [item, c] : freq) {
        double z = std::fabs(c - mean) / sd;
        CHECK(z < 5.0);
    }
}

TEST_CASE("draw_negatives throws when the eligible pool is too small") {
    RecordLedger led;
    led.m = 1;
    led.record_epoch({obs(0, 0, 4, 2, 2.0, 1.0)});  // item 4 classified
    std::set<int> exclusions = {1, 2, 3};
    Rng rng(5);
    // vocab 5: only item 5 remains eligible; asking for 2 must throw.
    CHECK_THROWS_WITH_AS(static_cast<void>(draw_negatives(led, 0, 0, 2, 5, exclusions, rng)),
                         doctest::Contains("vocabulary too small"), std::runtime_error);
    // Asking for 1 succeeds and returns exactly the survivor.
    auto out = draw_negatives(led, 0, 0, 1, 5, exclusions, rng);
    CHECK(out == std::vector<int>{5});
}

TEST_CASE("reverse_labels keeps the instance and appends one positive per false item") {
    RecordLedger led;
    led.m = 1;
    TrainingInstance inst;
    inst.user = 3;
    inst.t = 2;
    inst.positive = 10;
    inst.negatives = {4, 6};

    // No classified items: identity.
    auto plain = reverse_labels(led, inst);
    REQUIRE(plain.size() == 1);
    CHECK(plain[0].positive == 10);
    CHECK(plain[0].negatives == std::vector<int>{4, 6});

    led.mark_false(3, 2, 8);
    led.mark_false(3, 2, 5);
    auto out = reverse_labels(led, inst);
    REQUIRE(out.size() == 3);
    CHECK(out[0].positive == 10);
    std::set<int> extras = {out[1].positive, out[2].positive};
    CHECK(extras == std::set<int>{5, 8});
    for (size_t i = 1; i < out.size(); ++i) {
        CHECK(out[i].negatives.empty());  // reversed items carry no negatives
        CHECK(out[i].user == 3);
        CHECK(out[i].t == 2);
        CHECK(out[i].positive != inst.positive);
    }

    // A false set containing the original positive indicates ledger corruption.
    RecordLedger bad;
    bad.mark_false(3, 2, 10);
    CHECK_THROWS(reverse_labels(bad, inst));
}

TEST_CASE("after classification the item can never be drawn again at that context") {
    RecordLedger led;
    led.m = 2;
    led.record_epoch(epoch_for(7, true));
    led.record_epoch(epoch_for(7, true));
    REQUIRE(led.is_false(0, 0, 7));
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        auto out = draw_negatives(led, 0, 0, 3, 10, {}, rng);
        CHECK(std::find(out.begin(), out.end(), 7) == out.end());
    }
    // ...but the same item remains available at other contexts.
    Rng rng(1);
    bool seen = false;
    for (int i = 0; i < 200 && !seen; ++i)
        for (int item : draw_negatives(led, 0, 1, 3, 10, {}, rng)) seen |= (item == 7);
    CHECK(seen);
}

TEST_CASE("removal_filter resamples only mined negatives") {
    TrainingInstance inst;
    inst.user = 0;
    inst.t = 0;
    inst.positive = 2;
    inst.negatives = {9, 4};

    // No overlap: untouched.
    TrainingInstance copy = inst;
    Rng rng(3);
    removal_filter({11, 12}, copy, 20, {}, rng);
    CHECK(copy.negatives == inst.negatives);
    removal_filter({}, copy, 20, {}, rng);
    CHECK(copy.negatives == inst.negatives);

    // Mined member 9 is replaced by something outside mined/exclusions.
    std::set<int> mined = {9};
    std::set<int> exclusions = {1, 3};
    for (uint64_t seed = 0; seed < 100; ++seed) {
        TrainingInstance probe = inst;
        Rng r(seed);
        removal_filter(mined, probe, 20, exclusions, r);
        CHECK(probe.negatives[1] == 4);  // unmined slot untouched
        int fresh = probe.negatives[0];
        CHECK(fresh != 9);
        CHECK(fresh != 4);  // no duplicate with the kept negative
        CHECK(fresh != probe.positive);
        CHECK(mined.count(fresh) == 0);
        CHECK(exclusions.count(fresh) == 0);
        CHECK(fresh >= 1);
        CHECK(fresh <= 20);
    }
}

TEST_CASE("quantile_sorted interpolates linearly") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 4.0);
    CHECK(quantile_sorted(v, 0.5) == doctest::Approx(2.5));
    CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75));
    CHECK(quantile_sorted({5.0}, 0.3) == 5.0);
    CHECK_THROWS(quantile_sorted({}, 0.5));
}

TEST_CASE("score history keeps a sliding window") {
    ScoreHistory h;
    h.window = 3;
    LedgerKey k{0, 0, 5};
    for (int i = 1; i <= 5; ++i) h.push(k, static_cast<double>(i));
    CHECK(h.scores.at(k) == std::vector<double>{3.0, 4.0, 5.0});
}

TEST_CASE("variance miner selects stable high scorers") {
    ScoreHistory h;
    h.window = 5;
    // One stable high scorer, many noisy mid scorers, one stable low scorer.
    for (int e = 0; e < 5; ++e) {
        h.push({0, 0, 1}, 10.0 + 1e-6 * e);            // high mean, tiny variance
        h.push({0, 0, 2}, (e % 2) ? 9.0 : -9.0);       // high variance
        h.push({0, 0, 3}, -5.0 + 1e-6 * e);            // low mean, tiny variance
        for (int j = 4; j <= 12; ++j) h.push({0, 0, j}, 0.1 * j + 0.5 * ((e + j) % 3));
    }
    auto mined = mine_variance_based(h, 0.1);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0] == LedgerKey{0, 0, 1});

    // Identical histories: no mean is strictly above the top quantile.
    ScoreHistory same;
    same.window = 5;
    for (int e = 0; e < 5; ++e)
        for (int j = 1; j <= 6; ++j) same.push({0, 0, j}, 1.0);
    CHECK(mine_variance_based(same, 0.1).empty());

    // Entries with fewer than two scores are skipped entirely.
    ScoreHistory thin;
    thin.window = 5;
    thin.push({0, 0, 1}, 100.0);
    CHECK(mine_variance_based(thin, 0.1).empty());
}
