#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "gfl/common.hpp"
#include "gfl/detector.hpp"
#include "gfl/inference.hpp"
#include "oracles.hpp"

using namespace gfl;

using oracle::same;

TEST_CASE("default nms config")
{
    const NmsConfig c;
    CHECK(c.score_threshold == 0.05);
    CHECK(c.pre_topk == 1000);
    CHECK(c.iou_threshold == 0.6);
    CHECK(c.post_topk == 100);
    NmsConfig bad;
    bad.pre_topk = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("nms basics")
{
    const NmsConfig c;
    const std::vector<Detection> twins{{{0, 0, 4, 4}, 1, 0.8, 1}, {{0, 0, 4, 4}, 1, 0.9, 0}};
    const std::vector<Detection> kept = nms(twins, c);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);

    const std::vector<Detection> disjoint{
        {{0, 0, 1, 1}, 1, 0.5, 0}, {{5, 5, 6, 6}, 1, 0.7, 1}, {{10, 10, 11, 11}, 1, 0.6, 2}};
    const std::vector<Detection> all = nms(disjoint, c);
    CHECK(all.size() == 3);
    CHECK(all[0].score == 0.7);
    CHECK(all[2].score == 0.5);

    // Overlap across classes is not suppressed.
    const std::vector<Detection> classes{{{0, 0, 4, 4}, 1, 0.9, 0}, {{0, 0, 4, 4}, 2, 0.8, 1}};
    CHECK(nms(classes, c).size() == 2);
}

TEST_CASE("nms stages apply in order")
{
    // Ten stacked boxes of class 1 and five separated boxes of class 2.
    std::vector<Detection> cands;
    int idx = 0;
    for (int i = 0; i < 10; ++i) {
        cands.push_back({{0, 0, 10, 10}, 1, 0.9 - 0.01 * i, idx++});
    }
    for (int i = 0; i < 5; ++i) {
        cands.push_back({{20.0 * (i + 1), 0, 20.0 * (i + 1) + 5, 5}, 2, 0.5 - 0.01 * i, idx++});
    }
    cands.push_back({{0, 50, 5, 55}, 2, 0.05, idx++});   // not above the threshold
    cands.push_back({{0, 60, 5, 65}, 2, 0.01, idx++});

    NmsConfig c;
    c.pre_topk = 12;
    c.post_topk = 2;
    NmsStageCounts st;
    const std::vector<Detection> out = nms(cands, c, &st);
    CHECK(st.input == 17);
    CHECK(st.after_threshold == 15);
    CHECK(st.after_pre_topk == 12);      // drops the three lowest class-2 boxes
    CHECK(st.after_suppression == 3);    // one class-1 survivor, two class-2 boxes
    CHECK(st.after_post_topk == 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0].source_index == 0);
    CHECK(out[1].source_index == 10);

    // Suppression before the pre_topk cap would have kept all five class-2 boxes.
    c.pre_topk = 1000;
    c.post_topk = 100;
    CHECK(nms(cands, c).size() == 6);
}

TEST_CASE("nms ties break by source index")
{
    const std::vector<Detection> c{{{0, 0, 4, 4}, 1, 0.5, 7}, {{0, 0, 4, 4}, 1, 0.5, 3}};
    const std::vector<Detection> out = nms(c, NmsConfig{});
    REQUIRE(out.size() == 1);
    CHECK(out[0].source_index == 3);
}

TEST_CASE("nms equals the exhaustive reference")
{
    Rng rng(31);
    for (int k = 0; k < 100; ++k) {
        const auto [cands, c] = oracle::random_nms_instance(rng);
        const std::vector<Detection> fast = nms(cands, c);
        CHECK(same(fast, oracle::nms(cands, c)));
        // Subset of the input, non-increasing scores within a class.
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(fast[i].score > c.score_threshold);
            for (std::size_t j = 0; j < i; ++j) {
                if (fast[j].class_id == fast[i].class_id) {
                    CHECK(fast[j].score >= fast[i].score);
                }
            }
        }
    }
}

TEST_CASE("score candidates")
{
    HeadShape s;
    s.variant = HeadVariant::SeparateIou;
    s.regressor = RegressorKind::Dirac;
    HeadOutputs out;
    out.num_points = 1;
    out.outputs = s.outputs();
    out.values = {0.3, -1.0, 2.0, 1, 1, 1, 1, 40.0};
    ScoreGrid g = score_candidates(out, s);
    for (int c = 0; c < 3; ++c) {
        CHECK(g.at(0, c) == doctest::Approx(sigmoid(out.values[static_cast<std::size_t>(c)])).epsilon(1e-15));
    }
    out.values[7] = 0.0;
    g = score_candidates(out, s);
    CHECK(g.at(0, 0) == doctest::Approx(0.5 * sigmoid(0.3)).epsilon(1e-15));

    s.variant = HeadVariant::NoQuality;
    out.outputs = s.outputs();
    out.values.resize(7);
    g = score_candidates(out, s);
    CHECK(g.at(0, 2) == sigmoid(2.0));
    CHECK(predicted_quality(out, s, 0).empty());
}

TEST_CASE("make candidates")
{
    HeadShape s;
    s.variant = HeadVariant::NoQuality;
    s.regressor = RegressorKind::Dirac;
    Scene scene;
    scene.grid_width = 2;
    scene.grid_height = 1;
    scene.stride = 8.0;
    HeadOutputs out;
    out.num_points = 2;
    out.outputs = s.outputs();
    out.values = {0, 1, 2, 1, 1, 1, 1, /**/ 0, 0, 0, 0.5, 0.5, 0.5, 0.5};
    const std::vector<Detection> c = make_candidates(out, s, scene);
    REQUIRE(c.size() == 6);
    CHECK(c[4].source_index == 4);
    CHECK(c[4].class_id == 2);
    CHECK(c[0].box == Box{-4, -4, 12, 12});
    CHECK(c[3].box == Box{8, 0, 16, 8});
}

TEST_CASE("ap of trivial instances")
{
    const std::vector<std::vector<GtBox>> gts{{{{0, 0, 4, 4}, 1}, {{10, 10, 14, 14}, 2}}, {{{5, 5, 9, 9}, 1}}};
    std::vector<std::vector<Detection>> perfect(2);
    int idx = 0;
    for (std::size_t s = 0; s < gts.size(); ++s) {
        for (const GtBox& g : gts[s]) {
            perfect[s].push_back({g.box, g.class_id, 1.0, idx++});
        }
    }
    const std::vector<double> t = coco_iou_thresholds();
    REQUIRE(t.size() == 10);
    CHECK(t.front() == 0.5);
    CHECK(t.back() == doctest::Approx(0.95));
    EvalResult r = evaluate_ap(perfect, gts, t);
    CHECK(r.mean_ap == 1.0);
    CHECK(r.classes_evaluated == 2);

    const std::vector<std::vector<Detection>> none(2);
    r = evaluate_ap(none, gts, t);
    CHECK(r.mean_ap == 0.0);

    // A class without ground truth is excluded from the mean.
    perfect[0].push_back({{20, 20, 24, 24}, 3, 0.9, idx++});
    r = evaluate_ap(perfect, gts, t);
    CHECK(r.classes_evaluated == 2);

    CHECK_THROWS_AS(evaluate_ap(none, std::vector<std::vector<GtBox>>(3), t), ConfigError);
}

TEST_CASE("ap of a hand-computed ranking")
{
    // One class, two gts. Ranked: hit, miss, hit -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
    // Interpolated: 1 for r <= 0.5 (51 points), 2/3 for r in (0.5, 1] (50 points).
    const std::vector<std::vector<GtBox>> gts{{{{0, 0, 4, 4}, 1}, {{10, 0, 14, 4}, 1}}};
    const std::vector<std::vector<Detection>> dets{
        {{{0, 0, 4, 4}, 1, 0.9, 0}, {{30, 30, 34, 34}, 1, 0.8, 1}, {{10, 0, 14, 4}, 1, 0.7, 2}}};
    const std::vector<double> t{0.5};
    const double expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    CHECK(evaluate_ap(dets, gts, t).mean_ap == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("ap matches the brute-force oracle bit for bit")
{
    Rng rng(37);
    const std::vector<double> t = coco_iou_thresholds();
    for (int k = 0; k < 100; ++k) {
        const oracle::ApInstance in = oracle::random_ap_instance(rng);
        CHECK(same(evaluate_ap(in.dets, in.gts, t), oracle::evaluate(in.dets, in.gts, t)));
    }
}

TEST_CASE("ap does not increase with the iou threshold")
{
    Rng rng(41);
    const std::vector<double> t = coco_iou_thresholds();
    for (int k = 0; k < 50; ++k) {
        std::vector<std::vector<GtBox>> gts(2);
        std::vector<std::vector<Detection>> dets(2);
        for (int s = 0; s < 2; ++s) {
            for (int i = 0; i < 3; ++i) {
                gts[static_cast<std::size_t>(s)].push_back({oracle::random_box(rng), 1});
            }
            dets[static_cast<std::size_t>(s)] = oracle::random_candidates(rng, 8, 1);
            for (std::size_t i = 0; i < dets[static_cast<std::size_t>(s)].size() && i < 3; ++i) {
                Box b = gts[static_cast<std::size_t>(s)][i].box;
                b.x2 += 0.3 * static_cast<double>(i);
                dets[static_cast<std::size_t>(s)][i].box = b;
            }
        }
        const EvalResult r = evaluate_ap(dets, gts, t);
        double prev = 2.0;
        for (const auto& [thr, ap] : r.ap_per_iou) {
            CHECK(ap <= prev);
            CHECK(ap >= 0.0);
            CHECK(ap <= 1.0);
            prev = ap;
        }
    }
}

TEST_CASE("eval csv and detections jsonl")
{
    EvalResult r;
    r.ap_per_iou[0.5] = 0.25;
    r.mean_ap = 0.25;
    CHECK(eval_csv(r) == "iou_threshold,ap\n0.5,0.25\nmean,0.25\n");

    const std::vector<std::vector<Detection>> d{{{{1, 2, 3, 4}, 2, 0.5, 0}}, {}};
    CHECK(detections_jsonl(d) == R"({"box":[1.0,2.0,3.0,4.0],"class":2,"scene_id":0,"score":0.5})"
                                 "\n");
}
