//! Horizontal-only routing from a PE to the nearer edge memory controller.

use super::HardwareConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Controller {
    Left,
    Right,
}

impl Controller {
    pub fn index(self) -> usize {
        match self {
            Controller::Left => 0,
            Controller::Right => 1,
        }
    }
}

/// Links crossed from column `pe_col` to the nearer edge controller,
/// including the final link into the controller.
pub fn hops(pe_col: usize, pe_cols: usize) -> u64 {
    debug_assert!(pe_col < pe_cols);
    (pe_col + 1).min(pe_cols - pe_col) as u64
}

/// Ties go left.
pub fn nearer_controller(pe_col: usize, pe_cols: usize) -> Controller {
    if pe_col < pe_cols - pe_col {
        Controller::Left
    } else {
        Controller::Right
    }
}

/// Flits needed for a payload; a header-only message still occupies one.
pub fn flits(payload_bytes: usize, hw: &HardwareConfig) -> u64 {
    payload_bytes.div_ceil(hw.noc_link_bytes_per_cycle).max(1) as u64
}

pub fn route_cycles(pe_col: usize, pe_cols: usize, payload_bytes: usize, hw: &HardwareConfig) -> u64 {
    hops(pe_col, pe_cols) * hw.noc_hop_cycles
        + payload_bytes.div_ceil(hw.noc_link_bytes_per_cycle) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_pe_one_hop() {
        let hw = HardwareConfig::default();
        assert_eq!(route_cycles(0, 8, 32, &hw), 2);
        assert_eq!(route_cycles(7, 8, 32, &hw), 2);
    }

    #[test]
    fn interior_pe_header_only() {
        let hw = HardwareConfig::default();
        assert_eq!(route_cycles(3, 8, 0, &hw), 4);
        assert_eq!(route_cycles(4, 8, 0, &hw), 4);
        assert_eq!(nearer_controller(3, 8), Controller::Left);
        assert_eq!(nearer_controller(4, 8), Controller::Right);
    }

    #[test]
    fn single_column_always_one_hop() {
        let hw = HardwareConfig::default();
        assert_eq!(route_cycles(0, 1, 0, &hw), 1);
        assert_eq!(route_cycles(0, 1, 100, &hw), 1 + 4);
        assert_eq!(nearer_controller(0, 1), Controller::Left);
    }

    #[test]
    fn odd_width_tie_goes_left() {
        // Column 1 of 3 is two links from either edge.
        assert_eq!(hops(1, 3), 2);
        assert_eq!(nearer_controller(1, 3), Controller::Left);
    }
}
