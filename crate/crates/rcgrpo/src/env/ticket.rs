//! Ticket-world tool semantics: create_ticket, resolve_ticket, get_ticket.

use super::call::ToolCall;
use super::state::{Ticket, TicketState, TicketStatus};

/// Next sequential id of the form `T<n>`.
pub fn next_id(state: &TicketState) -> String {
    let max = state
        .tickets
        .keys()
        .filter_map(|id| id.strip_prefix('T').and_then(|n| n.parse::<u64>().ok()))
        .max()
        .unwrap_or(0);
    format!("T{}", max + 1)
}

/// Apply one ticket-world tool call. `Err` leaves the world untouched.
pub fn apply(state: &TicketState, call: &ToolCall) -> Result<(TicketState, String), String> {
    match call.name.as_str() {
        "create_ticket" => {
            let title = call
                .str_arg("title")
                .ok_or_else(|| "missing required argument 'title'".to_string())?;
            let id = next_id(state);
            let mut next = state.clone();
            next.tickets.insert(
                id.clone(),
                Ticket {
                    title: title.to_string(),
                    status: TicketStatus::Open,
                },
            );
            Ok((next, format!("created {id}")))
        }
        "resolve_ticket" => {
            let id = call
                .str_arg("id")
                .ok_or_else(|| "missing required argument 'id'".to_string())?;
            match state.tickets.get(id) {
                Some(t) if t.status == TicketStatus::Open => {
                    let mut next = state.clone();
                    next.tickets.get_mut(id).unwrap().status = TicketStatus::Resolved;
                    Ok((next, format!("resolved {id}")))
                }
                Some(_) => Err(format!("ticket '{id}' is already resolved")),
                None => Err(format!("no such ticket '{id}'")),
            }
        }
        "get_ticket" => {
            let id = call
                .str_arg("id")
                .ok_or_else(|| "missing required argument 'id'".to_string())?;
            match state.tickets.get(id) {
                Some(t) => Ok((state.clone(), format!("{} [{}]", t.title, t.status))),
                None => Err(format!("no such ticket '{id}'")),
            }
        }
        other => Err(format!("unknown tool '{other}'")),
    }
}
