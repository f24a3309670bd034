#include "evcs/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "evcs/errors.hpp"
#include "parallel.hpp"

namespace evcs {

void validate(const RefinementSettings& s) {
    if (!(s.alpha_threshold > 0.0 && s.alpha_threshold <= 1.0))
        throw ValidationError("refinement alpha threshold must lie in (0, 1]");
    if (s.max_rounds < 1)
        throw ValidationError("refinement rounds must be >= 1");
    if (!(s.flow_tolerance > 0.0))
        throw ValidationError("refinement flow tolerance must be > 0");
}

void validate(const PlannerSettings& s) {
    validate(s.inner);
    validate(s.refinement);
    if (s.starts < 1)
        throw ValidationError("planner needs at least one start");
    if (s.sizing_iterations < 1 || s.polish_iterations < 0)
        throw ValidationError("planner iteration limits must be positive");
    if (!(s.polish_step > 0.0))
        throw ValidationError("polish step must be > 0");
    if (s.jobs < 1)
        throw ValidationError("jobs must be >= 1");
}

double price_floor(const Node& node, double arrivals, double chargers, double profit_margin) {
    if (chargers <= 0.0)
        return profit_margin * node.electricity_price;
    if (arrivals <= 0.0)
        return kUnboundedFloor;
    return profit_margin * (node.electricity_price + chargers * node.site_cost / arrivals);
}

std::vector<double> round_and_fix(std::span<const double> relaxed, int budget) {
    constexpr double kSnap = 1e-9;
    std::vector<double> out(relaxed.size());
    std::vector<std::pair<double, std::size_t>> fractions;
    double delta = 0.0;
    for (std::size_t i = 0; i < relaxed.size(); ++i) {
        if (!(relaxed[i] >= 0.0))
            throw ValidationError("relaxed charger counts must be non-negative");
        out[i] = std::floor(relaxed[i] + kSnap);
        const double frac = std::max(0.0, relaxed[i] - out[i]);
        delta += frac;
        fractions.emplace_back(frac, i);
    }
    std::stable_sort(fractions.begin(), fractions.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto extra = static_cast<std::size_t>(std::floor(delta + kSnap));
    for (std::size_t k = 0; k < extra && k < fractions.size(); ++k)
        out[fractions[k].second] += 1.0;
    if (std::accumulate(out.begin(), out.end(), 0.0) > budget)
        throw ValidationError("relaxed charger counts exceed the budget");
    return out;
}

ConstraintReport check_constraints(const Design& design, const FlowState& flows, const Problem& problem) {
    const auto& net = *problem.network;
    const double pi = problem.params.profit_margin;
    ConstraintReport r;
    r.budget = problem.params.budget;
    r.chargers_used = design.total_chargers();
    r.budget_slack = r.budget - r.chargers_used;
    if (r.budget_slack < 0.0)
        r.violations.push_back("budget exceeded by " + std::to_string(-r.budget_slack));
    for (std::size_t i = 0; i < net.node_count(); ++i) {
        const double x = design.chargers[i];
        const double y = design.prices[i];
        const double a = flows.arrivals[i];
        const auto id = std::to_string(net.node(i).id);
        if (x < 0.0 || x != std::floor(x))
            r.violations.push_back("node " + id + ": charger count is not a non-negative integer");
        if (y < 0.0)
            r.violations.push_back("node " + id + ": negative price");
        if (x <= 0.0) {
            if (a > 0.0)
                r.violations.push_back("node " + id + ": arrivals at a closed station");
            continue;
        }
        StationReport s{net.node(i).id, x, y, a, price_floor(net.node(i), a, x, pi), a * y,
                        station_profit_gap(a, net.node(i), x, y, pi)};
        if (s.profit_gap < -1e-6 * s.revenue || (s.revenue == 0.0 && s.profit_gap < 0.0))
            r.violations.push_back("node " + id + ": unprofitable (gap " + std::to_string(s.profit_gap) + ")");
        r.stations.push_back(s);
    }
    return r;
}

namespace {

constexpr double kPriceMargin = 1e-7;  // relative head-room above the floor
constexpr double kMinOpen = 1e-3;      // smallest relaxed charger count of an open station
constexpr double kSizingGap = 1e-8;    // solver tolerance inside the sizing loop
constexpr double kProbeStep = 1e-3;    // relative finite-difference step

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// EV equilibria against a fixed NCD background, warm-started from the last solution.
class EvEvaluator {
public:
    EvEvaluator(const Problem& problem, const StrategyProfile& background, const SolverSettings& settings)
        : pb_(problem), settings_(settings), warm_(background) {
        const auto& cat = *problem.catalog;
        for (std::size_t od = 0; od < cat.od_count(); ++od)
            warm_.ev[od].assign(cat.paths_of(od).size(), 0.0);
    }

    /// Solves at `design` starting from `start` (or the warm profile) and keeps the result as
    /// the next warm start when `keep` is set.
    EquilibriumResult solve(const Design& design, const StrategyProfile* start = nullptr, bool keep = true) {
        StrategyProfile init = start ? *start : warm_;
        fill_closed(init, design);
        SolveOptions opts{Players::ev, &init};
        auto res = solve_equilibrium(pb_, design, settings_, opts);
        if (keep)
            warm_ = res.profile;
        return res;
    }

    const StrategyProfile& warm() const { return warm_; }
    void set_tolerance(double tol) { settings_.gap_tolerance = tol; }

private:
    // EV vectors that are empty or sit on closed stations restart from uniform.
    void fill_closed(StrategyProfile& q, const Design& design) const {
        const auto& cat = *pb_.catalog;
        for (std::size_t od = 0; od < cat.od_count(); ++od) {
            const auto paths = cat.paths_of(od);
            double mass = 0.0;
            bool closed = false;
            for (std::size_t k = 0; k < paths.size(); ++k) {
                mass += q.ev[od][k];
                closed = closed || (q.ev[od][k] > 0.0 && !design.is_open(cat.path(paths[k]).charge_node));
            }
            if (mass > 0.0 && !closed)
                continue;
            std::size_t open = 0;
            for (auto p : paths)
                open += design.is_open(cat.path(p).charge_node) ? 1 : 0;
            for (std::size_t k = 0; k < paths.size(); ++k) {
                const bool ok = design.is_open(cat.path(paths[k]).charge_node);
                q.ev[od][k] = open ? (ok ? 1.0 / static_cast<double>(open) : 0.0)
                                   : 1.0 / static_cast<double>(paths.size());
            }
        }
    }

    const Problem& pb_;
    SolverSettings settings_;
    StrategyProfile warm_;
};

double theta(const EquilibriumResult& eq, const Design& d, const Problem& pb) {
    return social_cost(eq.profile, eq.flows, d, pb).total();
}

std::vector<std::size_t> open_set(const std::vector<double>& x) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0)
            out.push_back(i);
    return out;
}

/// Queue-versus-site-cost sizing: x_i = a_i sqrt(lambda / (mu (pi T_i + nu))), with the
/// multiplier nu >= 0 chosen so that the total fits the budget.
std::vector<double> size_stations(const Problem& pb, const std::vector<double>& a) {
    const auto& net = *pb.network;
    const double lambda = pb.params.time_value, mu = pb.params.service_rate, pi = pb.params.profit_margin;
    const double budget = pb.params.budget;
    auto sized = [&](double nu) {
        std::vector<double> x(a.size(), 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] <= 0.0)
                continue;
            const double denom = mu * (pi * net.node(i).site_cost + nu);
            x[i] = denom > 0.0 ? a[i] * std::sqrt(lambda / denom) : kUnusable;
        }
        return x;
    };
    auto total = [](const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0); };
    auto x = sized(0.0);
    if (total(x) <= budget)
        return x;
    double lo = 0.0, hi = 1.0;
    while (total(sized(hi)) > budget)
        hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (total(sized(mid)) > budget ? lo : hi) = mid;
    }
    x = sized(hi);
    // Rescale away the bisection residue so the budget holds exactly.
    const double t = total(x);
    if (t > budget)
        for (auto& v : x)
            v *= budget / t;
    return x;
}

/// Euclidean projection onto {x_i >= lo for open i, sum x <= budget}.
void project_chargers(std::vector<double>& x, const std::vector<std::size_t>& open, double budget) {
    auto clipped_total = [&](double tau) {
        double s = 0.0;
        for (auto i : open)
            s += std::max(kMinOpen, x[i] - tau);
        return s;
    };
    for (auto i : open)
        x[i] = std::max(kMinOpen, x[i]);
    if (clipped_total(0.0) <= budget)
        return;
    double lo = 0.0, hi = 1.0;
    while (clipped_total(hi) > budget)
        hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (clipped_total(mid) > budget ? lo : hi) = mid;
    }
    for (auto i : open)
        x[i] = std::max(kMinOpen, x[i] - hi);
}

/// First-order response of the EV equilibrium around a priced design, by forward differences
/// over the open stations: d a / d y, d Theta / d y and, on request, the same in x.
struct Sensitivity {
    Eigen::MatrixXd jacobian;  // of y - floor(a(y)) at fixed x
    Eigen::VectorXd dtheta_dy;
    Eigen::MatrixXd dfloor_dx;  // total derivative of the floors in x at fixed y
    Eigen::VectorXd dtheta_dx;  // at fixed y
};

double theta(const EquilibriumResult& eq, const Design& d, const Problem& pb);

Sensitivity probe(const Problem& pb, EvEvaluator& eval, const Design& d, const EquilibriumResult& eq,
                  const std::vector<std::size_t>& open, bool with_x) {
    const auto n = static_cast<Eigen::Index>(open.size());
    const double pi = pb.params.profit_margin;
    const double base = theta(eq, d, pb);
    Sensitivity s;
    s.jacobian = Eigen::MatrixXd::Identity(n, n);
    s.dtheta_dy = Eigen::VectorXd::Zero(n);
    auto slope = [&](Eigen::Index k, const EquilibriumResult& pe, double h) {
        const auto i = open[static_cast<std::size_t>(k)];
        return (pe.flows.arrivals[i] - eq.flows.arrivals[i]) / h;
    };
    for (Eigen::Index j = 0; j < n; ++j) {
        Design moved = d;
        const double h = kProbeStep * std::max(1.0, d.prices[open[j]]);
        moved.prices[open[j]] += h;
        const auto pe = eval.solve(moved, &eq.profile, false);
        s.dtheta_dy[j] = (theta(pe, moved, pb) - base) / h;
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto i = open[k];
            const double a = eq.flows.arrivals[i];
            s.jacobian(k, j) += pi * d.chargers[i] * pb.network->node(i).site_cost / (a * a) * slope(k, pe, h);
        }
    }
    if (!with_x)
        return s;
    s.dfloor_dx = Eigen::MatrixXd::Zero(n, n);
    s.dtheta_dx = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Design moved = d;
        const double h = kProbeStep * std::max(1.0, d.chargers[open[j]]);
        moved.chargers[open[j]] += h;
        const auto pe = eval.solve(moved, &eq.profile, false);
        s.dtheta_dx[j] = (theta(pe, moved, pb) - base) / h;
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto i = open[k];
            const double a = eq.flows.arrivals[i];
            const double t = pb.network->node(i).site_cost;
            s.dfloor_dx(k, j) = -pi * d.chargers[i] * t / (a * a) * slope(k, pe, h) + (k == j ? pi * t / a : 0.0);
        }
    }
    return s;
}

struct FixedPoint {
    bool ok = false;
    Design design;
    EquilibriumResult eq;
    Eigen::MatrixXd jacobian;
};

/// Solves y_i = floor_i(a(y)) + s_i over the open stations by Newton's method with a
/// finite-difference Jacobian, reused as a chord while it keeps contracting.
class PriceSolver {
public:
    PriceSolver(const Problem& pb, EvEvaluator& eval) : pb_(pb), eval_(eval) {}

    FixedPoint solve(const std::vector<double>& x, const std::vector<double>& surcharge, std::vector<double> y,
                     const Eigen::MatrixXd* chord = nullptr) {
        FixedPoint out;
        const auto open = open_set(x);
        const auto n = open.size();
        Design d{x, std::vector<double>(x.size(), 0.0)};
        for (auto i : open)
            d.prices[i] = std::max(0.0, y[i]);
        const StrategyProfile base = eval_.warm();

        Eigen::VectorXd f(n);
        auto residual = [&](Design& dd, EquilibriumResult& eq, Eigen::VectorXd& r, bool keep) {
            eq = eval_.solve(dd, &base, keep);
            for (std::size_t k = 0; k < n; ++k) {
                const auto i = open[k];
                const double fl = price_floor(pb_.network->node(i), eq.flows.arrivals[i], x[i],
                                              pb_.params.profit_margin);
                if (fl == kUnboundedFloor || eq.flows.arrivals[i] <= 1e-9 * std::max(1.0, pb_.total_ev_demand()))
                    return false;
                r[static_cast<Eigen::Index>(k)] = dd.prices[i] - fl * (1.0 + kPriceMargin) - surcharge[i];
            }
            return true;
        };
        auto norm = [](const Eigen::VectorXd& r) { return r.size() ? r.cwiseAbs().maxCoeff() : 0.0; };

        if (!residual(d, out.eq, f, true)) {
            out.design = d;
            return out;
        }
        if (n == 0) {
            out.ok = true;
            out.design = d;
            return out;
        }
        Eigen::MatrixXd jac;
        bool fresh = false;
        if (chord && chord->rows() == static_cast<Eigen::Index>(n))
            jac = *chord;
        else {
            jac = jacobian(d, out.eq, open, x);
            fresh = true;
        }
        for (int it = 0; it < 60; ++it) {
            double scale = 1.0;
            for (auto i : open)
                scale = std::max(scale, d.prices[i]);
            if (norm(f) <= 1e-8 * scale) {
                out.ok = true;
                break;
            }
            const Eigen::VectorXd step = jac.partialPivLu().solve(f);
            bool accepted = false;
            double t = 1.0;
            for (int bt = 0; bt < 12 && step.allFinite(); ++bt, t *= 0.5) {
                Design trial = d;
                for (std::size_t k = 0; k < n; ++k)
                    trial.prices[open[k]] = std::max(0.0, d.prices[open[k]] - t * step[static_cast<Eigen::Index>(k)]);
                EquilibriumResult eq;
                Eigen::VectorXd ft(n);
                if (!residual(trial, eq, ft, false))
                    continue;
                if (norm(ft) < (1.0 - 1e-4 * t) * norm(f)) {
                    const bool slow = norm(ft) > 0.5 * norm(f);
                    d = std::move(trial);
                    out.eq = std::move(eq);
                    f = ft;
                    accepted = true;
                    if (slow) {
                        jac = jacobian(d, out.eq, open, x);
                        fresh = true;
                    } else {
                        fresh = false;
                    }
                    break;
                }
            }
            if (!accepted) {
                if (fresh)
                    break;
                jac = jacobian(d, out.eq, open, x);
                fresh = true;
            }
        }
        out.design = d;
        out.jacobian = jac;
        if (out.ok)
            eval_.solve(d, &out.eq.profile, true);
        return out;
    }

private:
    Eigen::MatrixXd jacobian(const Design& d, const EquilibriumResult& eq, const std::vector<std::size_t>& open,
                             const std::vector<double>&) {
        return probe(pb_, eval_, d, eq, open, false).jacobian;
    }

    const Problem& pb_;
    EvEvaluator& eval_;
};

std::vector<double> default_prices(const Problem& pb, const std::vector<double>& x) {
    const auto& net = *pb.network;
    std::vector<double> y(x.size(), 0.0);
    const double lambda = pb.params.time_value, mu = pb.params.service_rate, pi = pb.params.profit_margin;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0)
            y[i] = pi * net.node(i).electricity_price + std::sqrt(lambda * pi * net.node(i).site_cost / mu);
    return y;
}

/// Fixed-point pricing with repeated closure of the weakest station on failure.
struct Priced {
    Design design;
    EquilibriumResult eq;
    Eigen::MatrixXd jacobian;
};

Priced price_with_closures(const Problem& pb, EvEvaluator& eval, std::vector<double> x,
                           const std::vector<double>& surcharge, std::vector<double> y) {
    PriceSolver solver(pb, eval);
    const bool needs_station = pb.total_ev_demand() > 0.0;
    while (true) {
        // Stations on no EV route can never be profitable.
        for (auto i : open_set(x))
            if (pb.catalog->paths_charging_at(i).empty())
                x[i] = 0.0;
        if (needs_station && open_set(x).empty())
            throw InfeasibleError("no charging station can be operated profitably under this budget");
        auto fp = solver.solve(x, surcharge, y);
        if (fp.ok)
            return {fp.design, fp.eq, fp.jacobian};
        const auto open = open_set(x);
        if (open.empty())
            throw InfeasibleError("no charging station can be operated profitably under this budget");
        std::size_t weakest = open.front();
        double worst = kUnusable;
        for (auto i : open) {
            const double load = fp.eq.flows.arrivals.empty() ? 0.0 : fp.eq.flows.arrivals[i] / x[i];
            if (load < worst) {
                worst = load;
                weakest = i;
            }
        }
        x[weakest] = 0.0;
        y = fp.design.prices;
        if (needs_station && open_set(x).empty())
            throw InfeasibleError("no charging station can be operated profitably under this budget");
    }
}

/// Projected gradient descent on (open x if `move_x`, surcharges) with prices held at the
/// fixed point. Gradients come from implicit differentiation of the fixed point.
Priced polish(const Problem& pb, EvEvaluator& eval, Priced best, std::vector<double> surcharge, bool move_x,
              const PlannerSettings& settings) {
    const auto open = open_set(best.design.chargers);
    if (open.empty() || settings.polish_iterations == 0)
        return best;
    PriceSolver solver(pb, eval);
    double best_theta = theta(best.eq, best.design, pb);
    const auto n = static_cast<Eigen::Index>(open.size());

    for (int it = 0; it < settings.polish_iterations; ++it) {
        const auto sens = probe(pb, eval, best.design, best.eq, open, move_x);
        const auto lu = sens.jacobian.partialPivLu();
        // dy/ds = J^-1, dy/dx = J^-1 dfloor/dx.
        const Eigen::VectorXd w = lu.transpose().solve(sens.dtheta_dy);
        Eigen::VectorXd gs = w;
        Eigen::VectorXd gx = Eigen::VectorXd::Zero(n);
        if (move_x)
            gx = sens.dtheta_dx + sens.dfloor_dx.transpose() * w;
        if (!gs.allFinite() || !gx.allFinite())
            break;
        // Coordinates pinned at a bound with an outward gradient do not move.
        double gnorm = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto i = open[k];
            if (surcharge[i] <= 0.0 && gs[k] > 0.0)
                gs[k] = 0.0;
            gnorm = std::max({gnorm, std::abs(gs[k]), std::abs(gx[k])});
        }
        if (gnorm <= 1e-12 * std::max(1.0, best_theta))
            break;
        bool improved = false;
        for (double t = settings.polish_step / gnorm; t > 1e-6 / gnorm; t *= 0.25) {
            auto x = best.design.chargers;
            auto s = surcharge;
            for (Eigen::Index k = 0; k < n; ++k) {
                const auto i = open[k];
                if (move_x)
                    x[i] -= t * gx[k];
                s[i] = std::max(0.0, s[i] - t * gs[k]);
            }
            if (move_x)
                project_chargers(x, open, pb.params.budget);
            auto fp = solver.solve(x, s, best.design.prices, &sens.jacobian);
            if (!fp.ok)
                continue;
            const double th = theta(fp.eq, fp.design, pb);
            if (th < best_theta - 1e-12 * best_theta) {
                best_theta = th;
                best = {fp.design, fp.eq, fp.jacobian};
                surcharge = std::move(s);
                improved = true;
                break;
            }
        }
        if (!improved)
            break;
    }
    return best;
}

/// Iterated sizing against equilibrium arrivals from one starting allocation.
Priced relaxed_from_start(const Problem& pb, const StrategyProfile& background, const PlannerSettings& settings,
                          std::vector<double> x) {
    EvEvaluator eval(pb, background, settings.inner);
    // Intermediate sizing iterates only need rough arrivals.
    eval.set_tolerance(std::max(settings.inner.gap_tolerance, kSizingGap));
    std::vector<double> y = default_prices(pb, x);
    const double tol = 1e-6 * std::max(1.0, static_cast<double>(pb.params.budget));
    for (int it = 0; it < settings.sizing_iterations; ++it) {
        const auto eq = eval.solve(Design{x, y});
        auto next = size_stations(pb, eq.flows.arrivals);
        for (auto& v : next)
            if (v < kMinOpen)
                v = 0.0;
        double change = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            change = std::max(change, std::abs(next[i] - x[i]));
        x = std::move(next);
        y = default_prices(pb, x);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > 0.0)
                y[i] = price_floor(pb.network->node(i), eq.flows.arrivals[i], x[i], pb.params.profit_margin);
        if (change < tol)
            break;
    }
    eval.set_tolerance(settings.inner.gap_tolerance);
    return price_with_closures(pb, eval, x, std::vector<double>(x.size(), 0.0), y);
}

StrategyProfile background_of(const Problem& pb, const EquilibriumResult& ncd) {
    StrategyProfile q = ncd.profile;
    const auto& cat = *pb.catalog;
    for (std::size_t od = 0; od < cat.od_count(); ++od)
        q.ev[od].assign(cat.paths_of(od).size(), 0.0);
    return q;
}

EvSolution to_solution(const Problem& pb, const Priced& p) {
    return {p.design, p.eq, social_cost(p.eq.profile, p.eq.flows, p.design, pb), p.eq.converged};
}

}  // namespace

EquilibriumResult solve_pa_ncd(const Problem& problem, const SolverSettings& settings) {
    auto demands = problem.demands;
    for (auto& d : demands)
        d.ev_flow = 0.0;
    const auto road = with_demands(problem, demands);
    const auto closed = Design::closed(problem.catalog->node_count());
    SolveOptions opts{Players::ncd, nullptr};
    return solve_equilibrium(road, closed, settings, opts);
}

EvSolution solve_pa_ev_relaxed(const Problem& problem, const StrategyProfile& background,
                               const PlannerSettings& settings) {
    validate(settings);
    const auto n = problem.catalog->node_count();
    if (problem.total_ev_demand() <= 0.0) {
        EvEvaluator eval(problem, background, settings.inner);
        const auto d = Design::closed(n);
        const auto eq = eval.solve(d);
        return {d, eq, social_cost(eq.profile, eq.flows, d, problem), eq.converged};
    }
    if (problem.params.budget <= 0)
        throw InfeasibleError("budget of 0 chargers cannot serve positive EV demand");

    std::vector<std::size_t> stations;
    for (auto i : problem.catalog->station_nodes())
        if (std::binary_search(problem.candidates.begin(), problem.candidates.end(), i))
            stations.push_back(i);
    if (stations.empty())
        throw InfeasibleError("no candidate station lies on any EV route");

    const double budget = problem.params.budget;
    std::vector<std::vector<double>> starts;
    for (int k = 0; k < settings.starts; ++k) {
        std::vector<double> x(n, 0.0);
        if (k == 0) {
            for (auto i : stations)
                x[i] = budget / static_cast<double>(stations.size());
        } else {
            std::mt19937_64 rng(settings.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(k));
            double total = 0.0;
            for (auto i : stations)
                total += (x[i] = -std::log(1.0 - uniform01(rng)) + 1e-12);
            for (auto i : stations)
                x[i] *= budget / total;
        }
        starts.push_back(std::move(x));
    }

    auto [results, errors] = detail::run_jobs(starts.size(), settings.jobs, [&](std::size_t k) {
        return relaxed_from_start(problem, background, settings, starts[k]);
    });
    std::optional<std::size_t> best;
    double best_theta = kUnusable;
    for (std::size_t k = 0; k < results.size(); ++k) {
        if (!results[k])
            continue;
        const double th = theta(results[k]->eq, results[k]->design, problem);
        if (th < best_theta) {
            best_theta = th;
            best = k;
        }
    }
    if (!best) {
        for (auto& e : errors)
            if (e)
                std::rethrow_exception(e);
        throw InfeasibleError("relaxed placement failed from every start");
    }

    EvEvaluator eval(problem, background, settings.inner);
    eval.solve(results[*best]->design, &results[*best]->eq.profile);
    auto polished = polish(problem, eval, *results[*best], std::vector<double>(n, 0.0), true, settings);

    // Close stations the equilibrium no longer uses before handing over to rounding.
    bool closed = false;
    auto x = polished.design.chargers;
    for (auto i : open_set(x))
        if (polished.eq.flows.arrivals[i] < settings.open_threshold) {
            x[i] = 0.0;
            closed = true;
        }
    if (closed)
        polished = price_with_closures(problem, eval, x, std::vector<double>(n, 0.0), polished.design.prices);
    return to_solution(problem, polished);
}

EvSolution resolve_pricing(const Problem& problem, const StrategyProfile& background, std::vector<double> chargers,
                           const PlannerSettings& settings, const std::vector<double>* warm_prices) {
    validate(settings);
    const auto n = problem.catalog->node_count();
    if (chargers.size() != n)
        throw ValidationError("charger vector does not match the network");
    EvEvaluator eval(problem, background, settings.inner);
    if (problem.total_ev_demand() <= 0.0) {
        const auto d = Design{chargers, std::vector<double>(n, 0.0)};
        const auto eq = eval.solve(d);
        return {d, eq, social_cost(eq.profile, eq.flows, d, problem), eq.converged};
    }
    auto y = default_prices(problem, chargers);
    if (warm_prices)
        for (std::size_t i = 0; i < n; ++i)
            if (chargers[i] > 0.0 && (*warm_prices)[i] > 0.0)
                y[i] = (*warm_prices)[i];
    auto priced = price_with_closures(problem, eval, chargers, std::vector<double>(n, 0.0), y);
    priced = polish(problem, eval, priced, std::vector<double>(n, 0.0), false, settings);
    return to_solution(problem, priced);
}

EvSolution reprice_from(const Problem& problem, const StrategyProfile& background, const Design& start,
                        const PlannerSettings& settings) {
    validate(settings);
    const auto n = problem.catalog->node_count();
    if (start.chargers.size() != n || start.prices.size() != n)
        throw ValidationError("design does not match the network");
    EvEvaluator eval(problem, background, settings.inner);
    const auto eq = eval.solve(start);
    if (problem.total_ev_demand() <= 0.0)
        return {start, eq, social_cost(eq.profile, eq.flows, start, problem), eq.converged};
    std::vector<double> surcharge(n, 0.0);
    for (auto i : open_set(start.chargers)) {
        const double fl = price_floor(problem.network->node(i), eq.flows.arrivals[i], start.chargers[i],
                                      problem.params.profit_margin);
        if (std::isfinite(fl))
            surcharge[i] = std::max(0.0, start.prices[i] - fl * (1.0 + kPriceMargin));
    }
    auto kept = price_with_closures(problem, eval, start.chargers, surcharge, start.prices);
    kept = polish(problem, eval, kept, surcharge, false, settings);
    auto floored = price_with_closures(problem, eval, start.chargers, std::vector<double>(n, 0.0), start.prices);
    floored = polish(problem, eval, floored, std::vector<double>(n, 0.0), false, settings);
    const bool first = theta(kept.eq, kept.design, problem) <= theta(floored.eq, floored.design, problem);
    return to_solution(problem, first ? kept : floored);
}

PlanResult evaluate_plan(const Problem& problem, const Design& design, const EquilibriumResult& equilibrium,
                         std::string provenance) {
    PlanResult plan;
    plan.design = design;
    plan.equilibrium = equilibrium;
    plan.cost = social_cost(equilibrium.profile, equilibrium.flows, design, problem);
    plan.constraints = check_constraints(design, equilibrium.flows, problem);
    plan.provenance = std::move(provenance);
    plan.converged = equilibrium.converged;
    return plan;
}

namespace {

PlanResult plan_from(const Problem& pb, const EvSolution& s, std::string provenance) {
    return evaluate_plan(pb, s.design, s.equilibrium, std::move(provenance));
}

/// Relaxation, rounding and re-pricing against one NCD background.
PlanResult ev_stage(const Problem& pb, const StrategyProfile& background, const PlannerSettings& settings,
                    const std::string& provenance) {
    const auto relaxed = solve_pa_ev_relaxed(pb, background, settings);
    const auto rounded = round_and_fix(relaxed.design.chargers, pb.params.budget);
    if (pb.total_ev_demand() > 0.0 && std::accumulate(rounded.begin(), rounded.end(), 0.0) <= 0.0)
        throw InfeasibleError("rounded placement has no chargers");
    const auto priced = resolve_pricing(pb, background, rounded, settings, &relaxed.design.prices);
    auto plan = plan_from(pb, priced, provenance);
    plan.relaxed_social_cost = relaxed.cost.total();
    return plan;
}

double max_flow_change(const FlowState& a, const FlowState& b) {
    double vmax = 0.0, diff = 0.0;
    for (std::size_t l = 0; l < a.ncd_link.size(); ++l) {
        vmax = std::max(vmax, a.link_total(l));
        diff = std::max(diff, std::abs(a.link_total(l) - b.link_total(l)));
    }
    return vmax > 0.0 ? diff / vmax : diff;
}

}  // namespace

PlanResult jppo_de(const Problem& problem, const PlannerSettings& settings) {
    validate(settings);
    const auto ncd = solve_pa_ncd(problem, settings.inner);
    const auto n = problem.catalog->node_count();
    if (problem.total_ev_demand() <= 0.0) {
        auto plan = evaluate_plan(problem, Design::closed(n), ncd, "jppo-de/ncd-only");
        plan.relaxed_social_cost = plan.social_cost();
        return plan;
    }
    const auto background = background_of(problem, ncd);
    if (penetration_rate(problem.demands) <= settings.refinement.alpha_threshold)
        return ev_stage(problem, background, settings, "jppo-de/sequential");

    auto current = ev_stage(problem, background, settings, "jppo-de/refinement");
    current.refinement_trace.push_back(current.social_cost());
    bool settled = false;
    int rounds = 0;
    for (int round = 1; round <= settings.refinement.max_rounds && !settled; ++round) {
        SolveOptions opts{Players::ncd, &current.equilibrium.profile};
        const auto ncd_eq = solve_equilibrium(problem, current.design, settings.inner, opts);
        const auto candidate = ev_stage(problem, ncd_eq.profile, settings, "jppo-de/refinement");
        if (candidate.social_cost() > current.social_cost())
            break;
        settled = max_flow_change(current.equilibrium.flows, candidate.equilibrium.flows) <
                  settings.refinement.flow_tolerance;
        auto trace = std::move(current.refinement_trace);
        current = candidate;
        trace.push_back(current.social_cost());
        current.refinement_trace = std::move(trace);
        rounds = round;
    }
    current.provenance = "jppo-de/refinement(rounds=" + std::to_string(rounds) + ")";
    current.converged = current.converged && (settled || rounds < settings.refinement.max_rounds);
    return current;
}

std::vector<double> even_allocation(std::span<const std::size_t> candidates, std::size_t node_count, int budget) {
    std::vector<double> x(node_count, 0.0);
    if (candidates.empty())
        return x;
    const int m = static_cast<int>(candidates.size());
    for (int k = 0; k < m; ++k)
        x[candidates[static_cast<std::size_t>(k)]] = budget / m + (k < budget % m ? 1 : 0);
    return x;
}

PlanResult baseline_pro(const Problem& problem, const PlannerSettings& settings) {
    validate(settings);
    const auto n = problem.catalog->node_count();
    const auto ncd = solve_pa_ncd(problem, settings.inner);
    const auto background = background_of(problem, ncd);
    const auto x = even_allocation(problem.candidates, n, problem.params.budget);
    if (problem.total_ev_demand() > 0.0 && std::accumulate(x.begin(), x.end(), 0.0) <= 0.0)
        throw InfeasibleError("budget of 0 chargers cannot serve positive EV demand");
    return plan_from(problem, resolve_pricing(problem, background, x, settings), "pro");
}

namespace {

/// Design with every open station at the same price.
Design uniform_priced(const std::vector<double>& x, double price) {
    Design d{x, std::vector<double>(x.size(), 0.0)};
    for (auto i : open_set(x))
        d.prices[i] = price;
    return d;
}

/// Highest floor among open stations, with a marginal profit on top.
double covering_price(const Problem& pb, const std::vector<double>& x, const FlowState& flows) {
    double price = 0.0;
    for (auto i : open_set(x))
        price = std::max(price, price_floor(pb.network->node(i), flows.arrivals[i], x[i], pb.params.profit_margin) *
                                    (1.0 + kPriceMargin));
    return price;
}

/// Placement under a frozen uniform price. Route choice ignores a common price level, so the
/// placement minimises travel and queueing: chargers proportional to arrivals, iterated
/// against the equilibrium, then refined by projected gradient steps.
std::vector<double> place_under_uniform_price(const Problem& pb, EvEvaluator& eval,
                                              const std::vector<std::size_t>& stations,
                                              const PlannerSettings& settings, double price) {
    const auto n = pb.catalog->node_count();
    const double budget = pb.params.budget;
    const double total_ev = pb.total_ev_demand();
    std::vector<double> x(n, 0.0);
    for (auto i : stations)
        x[i] = budget / static_cast<double>(stations.size());
    eval.set_tolerance(std::max(settings.inner.gap_tolerance, kSizingGap));
    for (int it = 0; it < settings.sizing_iterations; ++it) {
        const auto eq = eval.solve(uniform_priced(x, price));
        std::vector<double> next(n, 0.0);
        for (auto i : stations) {
            next[i] = budget * eq.flows.arrivals[i] / total_ev;
            if (next[i] < kMinOpen)
                next[i] = 0.0;
        }
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            change = std::max(change, std::abs(next[i] - x[i]));
        x = std::move(next);
        if (change < 1e-6 * std::max(1.0, budget))
            break;
    }
    eval.set_tolerance(settings.inner.gap_tolerance);

    const auto open = open_set(x);
    auto eq = eval.solve(uniform_priced(x, price));
    double best = theta(eq, uniform_priced(x, price), pb);
    for (int it = 0; it < settings.polish_iterations && !open.empty(); ++it) {
        const auto d = uniform_priced(x, price);
        const auto sens = probe(pb, eval, d, eq, open, true);
        const double gnorm = sens.dtheta_dx.cwiseAbs().maxCoeff();
        if (!(gnorm > 1e-12 * std::max(1.0, best)))
            break;
        bool improved = false;
        for (double t = settings.polish_step / gnorm; t > 1e-6 / gnorm; t *= 0.25) {
            auto trial = x;
            for (std::size_t k = 0; k < open.size(); ++k)
                trial[open[k]] -= t * sens.dtheta_dx[static_cast<Eigen::Index>(k)];
            project_chargers(trial, open, budget);
            const auto td = uniform_priced(trial, price);
            auto te = eval.solve(td, &eq.profile, false);
            const double th = theta(te, td, pb);
            if (th < best - 1e-12 * best) {
                best = th;
                x = std::move(trial);
                eq = std::move(te);
                improved = true;
                break;
            }
        }
        if (!improved)
            break;
    }
    return x;
}

}  // namespace

PlanResult baseline_plo(const Problem& problem, const PlannerSettings& settings) {
    validate(settings);
    const auto n = problem.catalog->node_count();
    const auto ncd = solve_pa_ncd(problem, settings.inner);
    const auto background = background_of(problem, ncd);
    if (problem.total_ev_demand() <= 0.0)
        return evaluate_plan(problem, Design::closed(n), ncd, "plo");
    if (problem.params.budget <= 0)
        throw InfeasibleError("budget of 0 chargers cannot serve positive EV demand");

    std::vector<std::size_t> stations;
    for (auto i : problem.catalog->station_nodes())
        if (std::binary_search(problem.candidates.begin(), problem.candidates.end(), i))
            stations.push_back(i);
    if (stations.empty())
        throw InfeasibleError("no candidate station lies on any EV route");

    // Any common level works while placing; the covering price is set afterwards.
    double level = 0.0;
    for (auto i : stations)
        level = std::max(level, problem.params.profit_margin * problem.network->node(i).electricity_price);
    EvEvaluator eval(problem, background, settings.inner);
    const auto relaxed = place_under_uniform_price(problem, eval, stations, settings, level);
    const auto relaxed_eq = eval.solve(uniform_priced(relaxed, level));
    const double relaxed_price = covering_price(problem, relaxed, relaxed_eq.flows);
    const auto relaxed_design = uniform_priced(relaxed, relaxed_price);
    const double relaxed_theta = theta(relaxed_eq, relaxed_design, problem);

    auto x = round_and_fix(relaxed, problem.params.budget);
    while (true) {
        if (open_set(x).empty())
            throw InfeasibleError("rounded placement has no chargers");
        const auto eq = eval.solve(uniform_priced(x, level));
        bool closed = false;
        for (auto i : open_set(x))
            if (eq.flows.arrivals[i] < settings.open_threshold) {
                x[i] = 0.0;
                closed = true;
            }
        if (closed)
            continue;
        auto plan = evaluate_plan(problem, uniform_priced(x, covering_price(problem, x, eq.flows)), eq, "plo");
        plan.relaxed_social_cost = relaxed_theta;
        return plan;
    }
}

nlohmann::json plan_to_json(const PlanResult& plan, const Problem& problem) {
    const auto& net = *problem.network;
    nlohmann::json j;
    j["provenance"] = plan.provenance;
    j["converged"] = plan.converged;
    j["social_cost"] = {{"total", plan.cost.total()},
                        {"travel", plan.cost.travel()},
                        {"ncd_travel", plan.cost.ncd_travel},
                        {"ev_travel", plan.cost.ev_travel},
                        {"queue", plan.cost.queue},
                        {"charging", plan.cost.charging},
                        {"ev_total", plan.cost.ev_total()}};
    if (!std::isnan(plan.relaxed_social_cost))
        j["relaxed_social_cost"] = plan.relaxed_social_cost;
    j["relative_gap"] = plan.equilibrium.relative_gap;
    j["iterations"] = plan.equilibrium.iterations;
    j["budget"] = plan.constraints.budget;
    j["chargers_used"] = plan.constraints.chargers_used;
    j["budget_slack"] = plan.constraints.budget_slack;
    j["feasible"] = plan.constraints.feasible();
    j["violations"] = plan.constraints.violations;
    auto& nodes = j["nodes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < net.node_count(); ++i) {
        const double x = plan.design.chargers[i], a = plan.equilibrium.flows.arrivals[i];
        nlohmann::json n{{"id", net.node(i).id},
                         {"chargers", x},
                         {"price", plan.design.prices[i]},
                         {"arrivals", a}};
        if (x > 0.0) {
            n["price_floor"] = price_floor(net.node(i), a, x, problem.params.profit_margin);
            n["profit_gap"] = station_profit_gap(a, net.node(i), x, plan.design.prices[i], problem.params.profit_margin);
        }
        nodes.push_back(std::move(n));
    }
    auto& links = j["links"] = nlohmann::json::array();
    for (std::size_t l = 0; l < net.link_count(); ++l)
        links.push_back({{"id", net.link(l).id},
                         {"tail", net.link(l).tail},
                         {"head", net.link(l).head},
                         {"ncd_flow", plan.equilibrium.flows.ncd_link[l]},
                         {"ev_flow", plan.equilibrium.flows.ev_link[l]}});
    if (!plan.refinement_trace.empty())
        j["refinement_trace"] = plan.refinement_trace;
    return j;
}

}  // namespace evcs
