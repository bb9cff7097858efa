#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "featherpoint/deploy.hpp"
#include "featherpoint/error.hpp"
#include "featherpoint/model.hpp"
#include "featherpoint/rng.hpp"

using namespace featherpoint;

namespace {

// Values from docs/layer_table.md, produced by tools/layer_table.py.
constexpr std::uint64_t kParams = 64992;
constexpr std::uint64_t kMacs192x256 = 61980672;
constexpr std::uint64_t kMacs64x64 = 5165056;
constexpr std::uint64_t kInt8Weights = 66464;
constexpr std::uint64_t kPeakF32_192x256 = 1572864;
constexpr std::uint64_t kPeakI8_192x256 = 393216;
constexpr std::uint64_t kPeakF32_64x64 = 131072;

ExecGraph chain_graph() {
    ExecGraph g;
    g.tensor_elems = {100, 50, 25};
    g.graph_inputs = {0};
    g.graph_outputs = {2};
    g.steps = {{"op1", {0}, 1, 0}, {"op2", {1}, 2, 0}};
    return g;
}

// X(100) -> Y(50) -> Z(100) -> add(Z, X) -> O(100)
ExecGraph skip_graph() {
    ExecGraph g;
    g.tensor_elems = {100, 50, 100, 100};
    g.graph_inputs = {0};
    g.graph_outputs = {3};
    g.steps = {{"a", {0}, 1, 0}, {"b", {1}, 2, 0}, {"add", {2, 0}, 3, 0}};
    return g;
}

ExecGraph relabel(const ExecGraph& g, const std::vector<std::size_t>& perm) {
    ExecGraph r;
    r.tensor_elems.resize(g.tensor_elems.size());
    for (std::size_t i = 0; i < perm.size(); ++i) r.tensor_elems[perm[i]] = g.tensor_elems[i];
    for (auto t : g.graph_inputs) r.graph_inputs.push_back(perm[t]);
    for (auto t : g.graph_outputs) r.graph_outputs.push_back(perm[t]);
    for (const auto& s : g.steps) {
        ExecStep n{s.op + "'", {}, perm[s.output], s.macs};
        for (auto t : s.inputs) n.inputs.push_back(perm[t]);
        r.steps.push_back(n);
    }
    return r;
}

}  // namespace

TEST_SUITE("deploy-report") {

TEST_CASE("linear chain peak is 600 bytes during the first op") {
    auto r = peak_activation(chain_graph(), 4);
    CHECK(r.peak_bytes == 600);
    CHECK(r.peak_step == 0);
    CHECK(r.table.size() == 2);
    CHECK(r.table[1].live_bytes == (50 + 25) * 4);
    CHECK(peak_activation_bruteforce(chain_graph(), 4) == 600);
}

TEST_CASE("residual skip holds the input across the branch") {
    auto r = peak_activation(skip_graph(), 4);
    CHECK(r.peak_bytes == (100 + 100 + 100) * 4);
    CHECK(r.peak_step == 2);
    CHECK(r.table[1].live_bytes == (100 + 50 + 100) * 4);
    CHECK(peak_activation_bruteforce(skip_graph(), 4) == r.peak_bytes);
}

TEST_CASE("peak is invariant under tensor relabeling") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto g = random_exec_graph(rng, 12);
        std::vector<std::size_t> perm(g.tensor_elems.size());
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        CHECK(peak_activation(relabel(g, perm), 4).peak_bytes == peak_activation(g, 4).peak_bytes);
    }
}

TEST_CASE("liveness sweep agrees with the byte-counter simulation on random graphs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = random_exec_graph(rng, 15);
        g.validate();
        for (std::uint64_t bpe : {1, 4}) CHECK(peak_activation(g, bpe).peak_bytes == peak_activation_bruteforce(g, bpe));
    }
}

TEST_CASE("graph validation rejects reads of undefined tensors") {
    ExecGraph g = chain_graph();
    g.steps[0].inputs = {2};
    CHECK_THROWS_AS(g.validate(), ValueError);
}

TEST_CASE("weights size for a single conv") {
    auto u = make_conv_unit("c", 1, 1, 3, 1, false, NormKind::Affine, false, ActKind::ReLU, 0);
    std::vector<NamedParam> ps{{"c.weight", u.weight}, {"c.bias", u.bias}};
    CHECK(weights_size(ps, 4) == 40);
    CHECK(weights_size(ps, 1) == 14);
    CHECK_THROWS_AS(weights_size(ps, 2), ValueError);
}

TEST_CASE("MAC counts") {
    ArchSpec s;
    auto m = build_student(s, 0);
    CHECK(mac_count(m, {1, 1, 192, 256}) == kMacs192x256);
    CHECK(mac_count(m, {1, 1, 64, 64}) == kMacs64x64);
    auto g = trace_graph(m, {1, 1, 64, 64});
    for (const auto& st : g.steps)
        if (st.op == "pixel_shuffle") CHECK(st.macs == 0);
}

TEST_CASE("single conv MACs on 8x8 with padding 1") {
    ExecGraph g;
    g.tensor_elems = {64, 64};
    g.graph_inputs = {0};
    g.graph_outputs = {1};
    g.steps = {{"conv2d", {0}, 1, 64 * 9}};
    CHECK(mac_count(g) == 576);
}

TEST_CASE("default student memory report matches the layer table") {
    auto m = build_student(ArchSpec{}, 0);
    CHECK(weights_size(m, 4) == 4 * kParams);
    CHECK(weights_size(m, 1) == kInt8Weights);
    CHECK(weights_size(m, 1) < weights_size(m, 4));

    auto f = memory_report(m, {1, 1, 192, 256}, 4);
    CHECK(f.peak_activation_bytes == kPeakF32_192x256);
    CHECK(f.mac_count == kMacs192x256);
    CHECK(f.fits == (f.weights_bytes + f.peak_activation_bytes <= f.budget_bytes));
    CHECK(f.margin == static_cast<std::int64_t>(kDefaultBudgetBytes - 4 * kParams - kPeakF32_192x256));
    auto q = memory_report(m, {1, 1, 192, 256}, 1);
    CHECK(q.peak_activation_bytes == kPeakI8_192x256);
    CHECK(q.weights_bytes == kInt8Weights);
    CHECK(memory_report(m, {1, 1, 64, 64}, 4).peak_activation_bytes == kPeakF32_64x64);

    const auto max_row = std::max_element(f.live_table.begin(), f.live_table.end(),
                                          [](const LiveRow& a, const LiveRow& b) { return a.live_bytes < b.live_bytes; });
    CHECK(max_row->live_bytes == f.peak_activation_bytes);
    const auto json = memory_report_json(f);
    for (const char* key : {"weights_bytes", "peak_activation_bytes", "mac_count", "budget_bytes", "fits", "margin",
                            "live_table"})
        CHECK(json.find(key) != std::string::npos);
}

TEST_CASE("budget checks") {
    const std::uint64_t w = 615188, p = 847104;  // 600.77 KiB and 827.25 KiB
    auto b = check_budget(w, p);
    CHECK(b.fits);
    CHECK(b.margin == 4404019 - 615188 - 847104);
    CHECK_FALSE(check_budget(w, p, 1024).fits);
    auto m = build_student(ArchSpec{}, 0);
    CHECK_FALSE(memory_report(m, {1, 1, 64, 64}, 1, 1024).fits);
    std::int64_t prev = check_budget(0, p).margin;
    for (std::uint64_t ww = 1000; ww < 5000000; ww += 250000) {
        const auto cur = check_budget(ww, p).margin;
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK(check_budget(1000, 1000, 2000).fits);
    CHECK_FALSE(check_budget(1000, 1001, 2000).fits);
}

}  // TEST_SUITE
