//! Built-in cases shipped with the crate.

use std::path::Path;

use super::{parse_case, parse_matpower, CaseBundle, CaseFormat};
use crate::error::Result;

const T3: &str = include_str!("../../data/t3.json");
const IEEE14: &str = include_str!("../../data/ieee14.json");
const IEEE118: &str = include_str!("../../data/ieee118.json");

/// 3-bus triangle, equal 0.1 p.u. reactances, 20 MW limit on 1→3.
pub fn t3() -> CaseBundle {
    parse_case(T3, CaseFormat::Native).expect("embedded t3 case is valid")
}

/// IEEE 14-bus system with real-time offers 15/31/30/10/20 $/MWh at buses
/// 1/2/3/6/8 and limits on lines 2-3, 4-5 and 6-11.
pub fn ieee14() -> CaseBundle {
    parse_case(IEEE14, CaseFormat::Native).expect("embedded ieee14 case is valid")
}

/// IEEE 118-bus system with 16 limited lines and seeded offers/capacities.
pub fn ieee118() -> CaseBundle {
    parse_case(IEEE118, CaseFormat::Native).expect("embedded ieee118 case is valid")
}

/// Resolves a case reference: a built-in name (`t3`, `ieee14`, `ieee118`)
/// or a file path. A `.m` file may have a `<stem>.market.json` sidecar
/// next to it.
pub fn load_case_ref(reference: &str) -> Result<CaseBundle> {
    match reference {
        "t3" => return Ok(t3()),
        "ieee14" => return Ok(ieee14()),
        "ieee118" => return Ok(ieee118()),
        _ => {}
    }
    let path = Path::new(reference);
    let text = std::fs::read_to_string(path)?;
    match CaseFormat::from_path(path) {
        CaseFormat::Native => parse_case(&text, CaseFormat::Native),
        CaseFormat::Matpower => {
            let sidecar = path.with_extension("market.json");
            let side = if sidecar.exists() {
                Some(std::fs::read_to_string(sidecar)?)
            } else {
                None
            };
            parse_matpower(&text, side.as_deref())
        }
    }
}
