#include <doctest.h>

#include <cmath>
#include <random>

#include "srgi/contrast.hpp"
#include "srgi/error.hpp"
#include "support.hpp"

using namespace srgi;
using namespace srgi::contrast;
using nd::Matrix;
using nd::Tape;

namespace {

graphs::GlobalGraph graph_from(std::size_t n, const std::vector<std::tuple<ItemId, ItemId, std::uint32_t>>& edges) {
    std::vector<std::vector<graphs::Neighbor>> adj(n);
    for (auto [u, v, w] : edges) {
        adj[u].push_back({v, w});
        adj[v].push_back({u, w});
    }
    graphs::GlobalGraph g(n);
    g.set_adjacency(std::move(adj));
    return g;
}

double cos_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.cols; ++k) {
        ab += a(i, k) * b(j, k);
        aa += a(i, k) * a(i, k);
        bb += b(j, k) * b(j, k);
    }
    return (aa == 0 || bb == 0) ? 0.0 : ab / std::sqrt(aa * bb);
}

// Mean per-node loss written out term by term.
double infonce_oracle(const Matrix& z1, const Matrix& z2) {
    const std::size_t n = z1.rows;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = std::exp(cos_rows(z1, i, z2, i));
        double den = pos;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            den += std::exp(cos_rows(z1, i, z2, k)) + std::exp(cos_rows(z1, i, z1, k));
        }
        total += -std::log(pos / den);
    }
    return total / static_cast<double>(n);
}

double loss_of(const Matrix& z1, const Matrix& z2) {
    Tape t;
    return contrastive_loss(t.constant(z1), t.constant(z2)).value()(0, 0);
}

Matrix dense_normalized(const graphs::GlobalGraph& g, const std::vector<ItemId>& nodes) {
    const std::size_t n = nodes.size();
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) = 1.0;
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) a(i, j) = g.weight(nodes[i], nodes[j]);
    }
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) deg[i] += a(i, j);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) /= std::sqrt(deg[i] * deg[j]);
    return a;
}

Matrix dense_mul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k)
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

Matrix dense_propagate(const Propagation& p, const Matrix& x) {
    Tape t;
    return nd::segment_sum(t.constant(x), p.seg, p.weight).value();
}

}  // namespace

TEST_CASE("augmentation string parsing") {
    const auto a = parse_augment("edge_drop:0.2");
    CHECK(a.mode == AugmentMode::edge_drop);
    CHECK(a.ratio == 0.2);
    CHECK(parse_augment("node_drop:0").mode == AugmentMode::node_drop);
    CHECK(parse_augment(format_augment({AugmentMode::attr_mask, 0.35})).ratio == 0.35);
    CHECK(format_augment(parse_augment("attr_mask:0.5")) == "attr_mask:0.5");
    for (const char* bad : {"edge_drop", "drop:0.2", "edge_drop:x", "edge_drop:1", "edge_drop:-0.1", "edge_drop:0.2x", "edge_drop:"})
        CHECK_THROWS_AS(parse_augment(bad), DataError);
}

TEST_CASE("augmentation examples") {
    const auto k3 = graph_from(3, {{0, 1, 1}, {1, 2, 2}, {0, 2, 3}});
    SUBCASE("ratio zero is the identity") {
        for (auto mode : {AugmentMode::node_drop, AugmentMode::edge_drop, AugmentMode::attr_mask}) {
            const auto v = augment_graph(k3, {mode, 0.0}, 4, 9);
            CHECK(v.graph == k3);
            CHECK(v.num_alive() == 3);
            for (ItemId u = 0; u < 3; ++u) CHECK(v.feature_mask(u) == std::vector<double>(4, 1.0));
        }
    }
    SUBCASE("one of three nodes dropped") {
        const auto v = augment_graph(k3, {AugmentMode::node_drop, 0.34}, 4, 1);
        REQUIRE(v.num_alive() == 2);
        for (ItemId u = 0; u < 3; ++u)
            if (!v.alive[u]) CHECK(v.graph.degree(u) == 0);
        CHECK(v.graph.num_edges() == 1);
    }
    SUBCASE("one of three edges dropped") {
        const auto v = augment_graph(k3, {AugmentMode::edge_drop, 0.34}, 4, 1);
        CHECK(v.graph.num_edges() == 2);
        CHECK(v.num_alive() == 3);
    }
    CHECK_THROWS_AS(augment_graph(k3, {AugmentMode::edge_drop, 1.0}, 4, 1), DataError);
}

TEST_CASE("augmentation counts and reproducibility on random graphs") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 20, d = 10;
        const auto g = graphs::build_global_graph(testing::random_sessions(rng, 15, n, 8), n, 3);
        const double ratio = 0.05 * (trial % 10);
        const std::uint64_t seed = rng();
        for (auto mode : {AugmentMode::node_drop, AugmentMode::edge_drop, AugmentMode::attr_mask}) {
            const auto v = augment_graph(g, {mode, ratio}, d, seed);
            const auto again = augment_graph(g, {mode, ratio}, d, seed);
            CHECK(v.graph == again.graph);
            CHECK(v.alive == again.alive);
            CHECK(v.masked_dims == again.masked_dims);
            for (ItemId u = 0; u < n; ++u)
                for (const auto& nb : v.graph.neighbors(u)) {
                    CHECK(v.alive[u]);
                    CHECK(v.alive[nb.item]);
                    CHECK(g.weight(u, nb.item) == nb.weight);
                    CHECK(v.graph.weight(nb.item, u) == nb.weight);
                }
            const auto floor_of = [&](std::size_t m) { return static_cast<std::size_t>(std::floor(ratio * m)); };
            switch (mode) {
                case AugmentMode::node_drop: CHECK(n - v.num_alive() == floor_of(n)); break;
                case AugmentMode::edge_drop:
                    CHECK(g.num_edges() - v.graph.num_edges() == floor_of(g.num_edges()));
                    CHECK(v.num_alive() == n);
                    break;
                case AugmentMode::attr_mask: {
                    std::size_t masked_nodes = 0;
                    for (ItemId u = 0; u < n; ++u) {
                        const auto m = v.feature_mask(u);
                        const auto zeros = static_cast<std::size_t>(std::count(m.begin(), m.end(), 0.0));
                        if (!v.masked_dims[u].empty()) ++masked_nodes;
                        CHECK((zeros == 0 || zeros == floor_of(d)));
                    }
                    if (floor_of(d) > 0) CHECK(masked_nodes == floor_of(n));
                    CHECK(v.graph == g);
                    break;
                }
            }
        }
    }
}

TEST_CASE("normalized adjacency matches a dense oracle") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 15;
        const auto g = graphs::build_global_graph(testing::random_sessions(rng, 10, n, 7), n, 2);
        const auto view = augment_graph(g, {AugmentMode::edge_drop, 0.0}, 3, 0);
        std::vector<ItemId> nodes;
        for (ItemId v = 0; v < n; ++v)
            if (rng() % 3 != 0) nodes.push_back(v);
        if (nodes.empty()) continue;
        const Matrix x = testing::random_matrix(nodes.size(), 3, rng);
        const Matrix want = dense_mul(dense_normalized(g, nodes), x);
        CHECK(testing::max_abs_diff(dense_propagate(normalized_adjacency(view, nodes), x), want) < 1e-12);
    }
}

TEST_CASE("gcn encoder") {
    std::mt19937_64 rng(7);
    SUBCASE("4-node path against the dense oracle") {
        const auto g = graph_from(4, {{0, 1, 2}, {1, 2, 1}, {2, 3, 4}});
        const auto view = augment_graph(g, {AugmentMode::edge_drop, 0.0}, 3, 0);
        auto p = init_contrast_params(rng, 3);
        const Matrix emb = testing::random_matrix(4, 3, rng);
        const std::vector<ItemId> nodes = {0, 1, 2, 3};
        Tape t;
        const Matrix got = gcn_encode(view, nodes, t.constant(emb), p, t).value();
        const Matrix a = dense_normalized(g, nodes);
        Matrix h1 = dense_mul(dense_mul(a, emb), p.gcn1.value);
        for (double& v : h1.data) v = std::max(v, 0.0);
        const Matrix want = dense_mul(dense_mul(a, h1), p.gcn2.value);
        CHECK(testing::max_abs_diff(got, want) < 1e-9);
    }
    SUBCASE("no edges and identity weights give the input back") {
        const graphs::GlobalGraph g(3);
        const auto view = augment_graph(g, {AugmentMode::edge_drop, 0.0}, 2, 0);
        auto p = init_contrast_params(rng, 2);
        p.gcn1.value = Matrix(2, 2, {1, 0, 0, 1});
        p.gcn2.value = p.gcn1.value;
        const Matrix emb(3, 2, {0.5, 1.0, 2.0, 0.25, 3.0, 0.0});
        const std::vector<ItemId> nodes = {0, 1, 2};
        Tape t;
        CHECK(gcn_encode(view, nodes, t.constant(emb), p, t).value() == emb);
    }
    SUBCASE("masked dimensions and locality") {
        const auto g = graph_from(5, {{0, 1, 1}, {1, 2, 1}, {3, 4, 1}});
        const auto view = augment_graph(g, {AugmentMode::attr_mask, 0.5}, 4, 11);
        auto p = init_contrast_params(rng, 4);
        Matrix emb = testing::random_matrix(5, 4, rng);
        const std::vector<ItemId> nodes = {0, 1, 2, 3, 4};
        Tape t;
        const Matrix base = gcn_encode(view, nodes, t.constant(emb), p, t).value();
        for (ItemId v = 0; v < 5; ++v)
            for (std::size_t c : view.masked_dims[v]) emb(v, c) += 100.0;
        const Matrix masked_change = gcn_encode(view, nodes, t.constant(emb), p, t).value();
        CHECK(masked_change == base);
        emb(4, 0) += 1.0;
        emb(4, 1) += 1.0;
        emb(4, 2) += 1.0;
        emb(4, 3) += 1.0;
        const Matrix far = gcn_encode(view, nodes, t.constant(emb), p, t).value();
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 4; ++c) CHECK(far(r, c) == base(r, c));
    }
}

TEST_CASE("projection") {
    std::mt19937_64 rng(8);
    auto p = init_contrast_params(rng, 3);
    const Matrix o = testing::random_matrix(4, 3, rng);
    {
        Tape t;
        const Matrix z = project(t.constant(o), p, t).value();
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = p.b4.value(0, j);
                for (std::size_t k = 0; k < 3; ++k) s += p.w8.value(j, k) * o(i, k);
                CHECK(std::abs(z(i, j) - std::max(s, 0.0)) < 1e-12);
                CHECK(z(i, j) >= 0.0);
            }
    }
    p.w8.value = Matrix(3, 3);
    p.b4.value = Matrix(1, 3);
    {
        Tape t;
        CHECK(project(t.constant(o), p, t).value() == Matrix(4, 3));
    }
    p.w8.value = Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Matrix pos = o;
    for (double& v : pos.data) v = std::abs(v);
    Tape t;
    CHECK(project(t.constant(pos), p, t).value() == pos);
}

TEST_CASE("contrastive loss closed forms") {
    for (std::size_t n : {2u, 8u, 64u}) {
        CAPTURE(n);
        Matrix eye(n, n);
        for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
        CHECK(std::abs(loss_of(eye, eye) - std::log(1.0 + 2.0 * (n - 1) / std::exp(1.0))) < 1e-6);
        const Matrix same(n, 5, 0.7);
        CHECK(std::abs(loss_of(same, same) - std::log(2.0 * n - 1.0)) < 1e-6);
    }
    Matrix eye2(2, 2, {1, 0, 0, 1});
    CHECK(loss_of(eye2, eye2) == doctest::Approx(0.5515).epsilon(1e-4));
}

TEST_CASE("contrastive loss against the written-out formula and its bounds") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + trial % 9, d = 1 + trial % 5;
        const Matrix z1 = testing::random_matrix(n, d, rng), z2 = testing::random_matrix(n, d, rng);
        const double got = loss_of(z1, z2);
        CHECK(std::abs(got - infonce_oracle(z1, z2)) < 1e-10);
        const double extra = 2.0 * (n - 1);
        CHECK(got >= std::log(1 + extra * std::exp(-2.0)) - 1e-12);
        CHECK(got <= std::log(1 + extra * std::exp(2.0)) + 1e-12);
    }
}

TEST_CASE("contrastive loss falls as the positive pair aligns") {
    // z2_0 turns in the e0-e2 plane, so only cos(z1_0, z2_0) changes.
    const Matrix z1(2, 3, {1, 0, 0, 0, 1, 0});
    double last = INFINITY;
    for (double a = 1.5; a >= 0.0; a -= 0.25) {
        const Matrix z2(2, 3, {std::cos(a), 0, std::sin(a), 0, 1, 0});
        const double l = loss_of(z1, z2);
        CHECK(l < last);
        last = l;
    }
}

TEST_CASE("contrastive loss errors and gradient") {
    Tape t;
    CHECK_THROWS_AS(contrastive_loss(t.constant(Matrix(1, 3, 1.0)), t.constant(Matrix(1, 3, 1.0))), DataError);
    CHECK_THROWS_AS(contrastive_loss(t.constant(Matrix(2, 3, 1.0)), t.constant(Matrix(3, 3, 1.0))), ShapeError);
    std::mt19937_64 rng(2);
    const Matrix other = testing::random_matrix(4, 3, rng);
    const auto f = [&](Tape& tt, nd::Var z) { return contrastive_loss(z, tt.constant(other), 0.5); };
    const auto rep = nd::grad_check(f, testing::random_matrix(4, 3, rng), 1e-5, 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("combined loss") {
    Tape t;
    const auto s = t.constant(Matrix(1, 1, 1.0));
    const auto c = t.constant(Matrix(1, 1, 0.5));
    CHECK(combined_loss(s, c, 100).value()(0, 0) == 51.0);
    CHECK(combined_loss(s, c, 0).value()(0, 0) == 1.0);
    for (double lambda : {10.0, 50.0, 100.0, 150.0, 200.0})
        CHECK(combined_loss(s, c, lambda).value()(0, 0) == doctest::Approx(1.0 + 0.5 * lambda));
    CHECK_THROWS_AS(combined_loss(s, c, -1), DataError);
}

TEST_CASE("contrast node selection") {
    const auto g = graph_from(6, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {4, 5, 1}});
    const auto full = augment_graph(g, {AugmentMode::edge_drop, 0.0}, 2, 0);
    const std::vector<ItemId> batch = {2, 0, 2};
    CHECK(contrast_nodes(batch, g, full, full, 100) == std::vector<ItemId>{0, 2, 1, 3});
    CHECK(contrast_nodes(batch, g, full, full, 3) == std::vector<ItemId>{0, 2, 1});
    auto dropped = full;
    dropped.alive[1] = false;
    CHECK(contrast_nodes(batch, g, full, dropped, 100) == std::vector<ItemId>{0, 2, 3});
}
