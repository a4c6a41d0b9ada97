//! Programs shipped with the crate: lock-free data structures in hazard
//! pointer and epoch-based variants, plus small programs for the explorer.

use crate::lang::{parse_program, Program};

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    /// Built-in automaton the program is written against.
    pub smr: &'static str,
    pub source: &'static str,
}

impl Entry {
    pub fn program(&self) -> Program {
        parse_program(self.source).unwrap_or_else(|e| panic!("{}: {e}", self.name))
    }

    fn header(&self) -> impl Iterator<Item = &'static str> {
        self.source
            .lines()
            .map_while(|l| l.trim().strip_prefix("//"))
            .map(str::trim)
    }

    /// Declared verdict of the invariant annotations, if any.
    pub fn expect_holds(&self) -> Option<bool> {
        self.header().find_map(|h| match h.strip_prefix("expect:")?.trim() {
            "holds" => Some(true),
            "violated" => Some(false),
            _ => None,
        })
    }

    pub fn racy(&self) -> bool {
        self.header().any(|h| h == "racy")
    }
}

macro_rules! entry {
    ($name:literal, $smr:literal) => {
        Entry {
            name: $name,
            smr: $smr,
            source: include_str!(concat!("../corpus/", $name, ".prog")),
        }
    };
}

pub const STRUCTURES: &[Entry] = &[
    entry!("treiber_hp", "hp2"),
    entry!("treiber_ebr", "ebr"),
    entry!("msqueue_hp", "hp2"),
    entry!("msqueue_ebr", "ebr"),
    entry!("dglm_hp", "hp2"),
    entry!("dglm_ebr", "ebr"),
    entry!("vy_cas_hp", "hp2"),
    entry!("vy_cas_ebr", "ebr"),
    entry!("vy_dcas_hp", "hp2"),
    entry!("vy_dcas_ebr", "ebr"),
    entry!("orvyy_hp", "hp2"),
    entry!("orvyy_ebr", "ebr"),
];

macro_rules! micro {
    ($name:literal, $smr:literal) => {
        Entry {
            name: $name,
            smr: $smr,
            source: include_str!(concat!("../corpus/micro/", $name, ".prog")),
        }
    };
}

/// Small programs for the explorer. A header comment records whether the
/// annotations hold under garbage collection (`// expect: holds|violated`)
/// and whether the program races once frees are allowed (`// racy`).
pub const MICRO: &[Entry] = &[
    micro!("active_then_retire", "ebr"),
    micro!("alias_eq", "ebr"),
    micro!("angel_after_leave", "ebr"),
    micro!("angel_before_leave", "ebr"),
    micro!("angel_late_snapshot", "ebr"),
    micro!("angel_list_walk", "ebr"),
    micro!("angel_loop", "ebr"),
    micro!("angel_two_members", "ebr"),
    micro!("assume_eq_then_inv", "ebr"),
    micro!("assume_neq_then_inv", "ebr"),
    micro!("choice_eq", "ebr"),
    micro!("double_retire", "ebr"),
    micro!("ebr_outside_region", "ebr"),
    micro!("hp_protect_stale", "hp2"),
    micro!("hp_protect_validate", "hp2"),
    micro!("loop_lag_eq", "ebr"),
    micro!("malloc_active", "ebr"),
    micro!("null_is_active", "ebr"),
    micro!("pop_atomic", "ebr"),
    micro!("pop_cas", "ebr"),
    micro!("pop_stale_active", "ebr"),
    micro!("published_then_retired", "ebr"),
    micro!("published_untouched", "ebr"),
    micro!("read_data_active", "ebr"),
    micro!("retire_then_active", "ebr"),
    micro!("retire_unlinked_twice", "ebr"),
    micro!("shared_reads_atomic", "ebr"),
    micro!("shared_reads_eq", "ebr"),
    micro!("stale_comparison", "ebr"),
    micro!("two_mallocs_eq", "ebr"),
    micro!("unprotected_read", "hp2"),
    micro!("use_after_retire", "ebr"),
];

pub fn structure(name: &str) -> Option<&'static Entry> {
    STRUCTURES.iter().find(|e| e.name == name)
}

pub fn micro(name: &str) -> Option<&'static Entry> {
    MICRO.iter().find(|e| e.name == name)
}
