//! Contingency application.

use crate::error::GridError;
use crate::model::{Element, GridCase};

fn set_status(case: &GridCase, element: Element, status: bool) -> Result<GridCase, GridError> {
    let mut out = case.clone();
    let flag = match element {
        Element::Branch(id) => out.branches.iter_mut().find(|b| b.id == id).map(|b| &mut b.in_service),
        Element::Generator(id) => out.generators.iter_mut().find(|g| g.id == id).map(|g| &mut g.in_service),
    }
    .ok_or(GridError::UnknownElement(element))?;
    if *flag == status {
        return Err(if status {
            GridError::AlreadyInService(element)
        } else {
            GridError::AlreadyOutOfService(element)
        });
    }
    *flag = status;
    if status {
        out.meta.outages.retain(|e| *e != element);
    } else {
        out.meta.outages.push(element);
    }
    out.refresh_connectivity();
    Ok(out)
}

/// Takes `element` out of service. The returned case carries islanding flags
/// in its metadata; a case cut off from its slack is flagged non-solvable
/// rather than rejected.
pub fn apply_outage(case: &GridCase, element: Element) -> Result<GridCase, GridError> {
    set_status(case, element, false)
}

/// Inverse of [`apply_outage`].
pub fn restore(case: &GridCase, element: Element) -> Result<GridCase, GridError> {
    set_status(case, element, true)
}

/// In-service branches and non-slack generators: the single-element
/// contingency set of a case.
pub fn n1_elements(case: &GridCase) -> Vec<Element> {
    let slack = case.slack_bus().id;
    case.branches
        .iter()
        .filter(|b| b.in_service)
        .map(|b| Element::Branch(b.id))
        .chain(
            case.generators
                .iter()
                .filter(|g| g.in_service && g.bus != slack)
                .map(|g| Element::Generator(g.id)),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::parse_matpower_case;
    use crate::model::{BranchId, GenId};

    // bus 3 is radial off bus 2; buses 1-2 are joined by two parallel lines
    const RADIAL: &str = "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 10 2 0 0 1 1 0 230 1 1.1 0.9;
3 1 20 5 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 100 -100 1 100 1 200 0];
mpc.branch = [
1 2 0.01 0.1 0 0 0 0 0 0 1;
1 2 0.01 0.1 0 0 0 0 0 0 1;
2 3 0.01 0.1 0 0 0 0 0 0 1;
];";

    #[test]
    fn radial_outage_sets_islanding_flag() {
        let case = parse_matpower_case(RADIAL).unwrap();
        let out = apply_outage(&case, Element::Branch(BranchId(3))).unwrap();
        assert!(out.meta.islanded);
        assert!(out.meta.non_solvable);
        assert_eq!(out.meta.outages, vec![Element::Branch(BranchId(3))]);
    }

    #[test]
    fn parallel_outage_stays_connected() {
        let case = parse_matpower_case(RADIAL).unwrap();
        let out = apply_outage(&case, Element::Branch(BranchId(1))).unwrap();
        assert!(!out.meta.islanded);
        assert!(!out.meta.non_solvable);
    }

    #[test]
    fn unknown_element_is_an_error() {
        let case = parse_matpower_case(RADIAL).unwrap();
        assert_eq!(
            apply_outage(&case, Element::Branch(BranchId(42))).unwrap_err(),
            GridError::UnknownElement(Element::Branch(BranchId(42)))
        );
        assert!(apply_outage(&case, Element::Generator(GenId(9))).is_err());
    }

    #[test]
    fn outage_then_restore_round_trips() {
        let case = parse_matpower_case(RADIAL).unwrap();
        for e in n1_elements(&case) {
            let back = restore(&apply_outage(&case, e).unwrap(), e).unwrap();
            assert_eq!(back, case);
        }
    }

    #[test]
    fn double_outage_is_rejected() {
        let case = parse_matpower_case(RADIAL).unwrap();
        let e = Element::Branch(BranchId(1));
        let once = apply_outage(&case, e).unwrap();
        assert_eq!(apply_outage(&once, e).unwrap_err(), GridError::AlreadyOutOfService(e));
    }
}
