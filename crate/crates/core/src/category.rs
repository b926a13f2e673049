//! Greedy formation of slice-in-slice categories by (throughput, spectral
//! efficiency) SLA ranges.
//!
//! First-fit in ascending category index with closed intervals; a service
//! matching no range opens a new category centered on its own metrics.

use crate::model::Category;

/// First category whose closed SLA ranges contain the metrics, or `None`.
pub fn try_assign(
    throughput_mbps: f64,
    spectral_eff: f64,
    categories: &[Category],
) -> Option<usize> {
    debug_assert!(throughput_mbps.is_finite() && spectral_eff.is_finite());
    categories
        .iter()
        .position(|c| c.contains(throughput_mbps, spectral_eff))
}

/// Single first-fit pass over services in id order. Returns the formed
/// categories and, aligned with the input, each service's category position.
pub fn form_categories(
    services: &[(usize, f64, f64)],
    delta_t: f64,
    delta_e: f64,
) -> (Vec<Category>, Vec<usize>) {
    debug_assert!(delta_t > 0.0 && delta_e > 0.0);
    let mut categories: Vec<Category> = Vec::new();
    let mut assignment = Vec::with_capacity(services.len());
    for (service_id, u_mbps, eta) in services {
        let target = match try_assign(*u_mbps, *eta, &categories) {
            Some(idx) => idx,
            None => {
                categories.push(Category {
                    index: categories.len() + 1,
                    center_throughput: *u_mbps,
                    center_spectral_eff: *eta,
                    delta_t,
                    delta_e,
                    members: Vec::new(),
                    capacity: 0,
                    is_new: false,
                });
                categories.len() - 1
            }
        };
        categories[target].members.push(*service_id);
        categories[target].capacity += 1;
        assignment.push(target);
    }
    (categories, assignment)
}
