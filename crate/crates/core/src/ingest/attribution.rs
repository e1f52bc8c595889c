//! Separation of app traffic from system traffic using the socket tuples
//! recorded inside the app process.

use super::{Flow, HookedTuple};

/// Clock slack, in seconds, between hook timestamps and capture timestamps.
pub const ATTRIBUTION_SLACK: f64 = 2.0;

fn tuple_matches(flow: &Flow, t: &HookedTuple, slack: f64) -> bool {
    let same_ends = (t.src == flow.client && t.dst == flow.server) || (t.src == flow.server && t.dst == flow.client);
    same_ends
        && t.proto == flow.transport
        && flow.first_ts >= t.first_ts - slack
        && flow.first_ts <= t.last_ts + slack
}

/// Marks each flow as app traffic when its endpoints (exact ports, either
/// orientation) match a hooked tuple and it starts inside the tuple's
/// window widened by `slack` seconds. Flows are kept either way.
pub fn filter_app_traffic(flows: &mut [Flow], tuples: &[HookedTuple], slack: f64) {
    for flow in flows {
        flow.app_attributed = tuples.iter().any(|t| tuple_matches(flow, t, slack));
    }
}
