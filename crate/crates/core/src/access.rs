//! DIFS and backoff-freeze mechanics shared by both transmitters.
//!
//! A node that listened during the previous slot applies what it heard at
//! the start of the next one. An idle slot advances DIFS or the backoff
//! counter; a busy slot restarts DIFS and freezes any counter.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Listen {
    Difs,
    Backoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Heard {
    /// Still waiting in DIFS (reset or partially elapsed).
    Difs,
    /// DIFS just elapsed; the node enters backoff.
    DifsComplete,
    /// Counter decremented (or already zero).
    Counted,
    /// Busy channel during backoff: counter preserved, DIFS re-armed.
    Frozen,
}

/// Applies one observed slot to a listening node.
pub(crate) fn hear(
    listen: Listen,
    busy_prev: bool,
    difs_slots: u32,
    difs_remaining: &mut u32,
    counter: &mut u32,
) -> Heard {
    match listen {
        Listen::Difs => {
            if busy_prev {
                *difs_remaining = difs_slots;
                Heard::Difs
            } else {
                *difs_remaining = difs_remaining.saturating_sub(1);
                if *difs_remaining == 0 {
                    Heard::DifsComplete
                } else {
                    Heard::Difs
                }
            }
        }
        Listen::Backoff => {
            if busy_prev {
                *difs_remaining = difs_slots;
                Heard::Frozen
            } else {
                *counter = counter.saturating_sub(1);
                Heard::Counted
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn busy_slot_rearms_difs() {
        let (mut d, mut c) = (1, 5);
        assert_eq!(hear(Listen::Difs, true, 3, &mut d, &mut c), Heard::Difs);
        assert_eq!((d, c), (3, 5));
        assert_eq!(hear(Listen::Backoff, true, 3, &mut d, &mut c), Heard::Frozen);
        assert_eq!((d, c), (3, 5));
    }

    #[test]
    fn idle_slots_count_down() {
        let (mut d, mut c) = (2, 2);
        assert_eq!(hear(Listen::Difs, false, 2, &mut d, &mut c), Heard::Difs);
        assert_eq!(hear(Listen::Difs, false, 2, &mut d, &mut c), Heard::DifsComplete);
        assert_eq!(hear(Listen::Backoff, false, 2, &mut d, &mut c), Heard::Counted);
        assert_eq!(c, 1);
    }
}
