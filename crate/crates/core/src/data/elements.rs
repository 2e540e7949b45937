//! Element symbols for the first four periods.

const SYMBOLS: [&str; 36] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
];

/// Atomic number of a symbol, case-insensitively (`"cl"`, `"CL"` and `"Cl"`
/// all map to 17). Bare atomic numbers in range are accepted too.
pub fn atomic_number(symbol: &str) -> Option<u32> {
    if let Ok(z) = symbol.parse::<u32>() {
        return (1..=SYMBOLS.len() as u32).contains(&z).then_some(z);
    }
    SYMBOLS.iter().position(|s| s.eq_ignore_ascii_case(symbol)).map(|i| i as u32 + 1)
}

pub fn symbol(z: u32) -> Option<&'static str> {
    SYMBOLS.get((z as usize).checked_sub(1)?).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(atomic_number("H"), Some(1));
        assert_eq!(atomic_number("cl"), Some(17));
        assert_eq!(atomic_number("8"), Some(8));
        assert_eq!(atomic_number("Xx"), None);
        assert_eq!(atomic_number("0"), None);
        assert_eq!(symbol(6), Some("C"));
        assert_eq!(symbol(0), None);
        for z in 1..=36 {
            assert_eq!(atomic_number(symbol(z).unwrap()), Some(z));
        }
    }
}
