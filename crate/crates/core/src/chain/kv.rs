use super::{Contract, ContractError, ExecCtx};
use crate::value::{decode_values, encode_values, Value};
use crate::xbus::{kind, Event};

/// Plain key-value contract used by scenarios and tests.
///
/// Methods: `set(key, value)`, `del(key)`, `add(key, delta)` and
/// `send(dest_chain, dest_contract, key, value)`, which asks the peer
/// contract to `set` through the event bus.
#[derive(Debug, Clone)]
pub struct KvContract {
    id: String,
}

impl KvContract {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Contract for KvContract {
    fn id(&self) -> &str {
        &self.id
    }

    fn invoke(&self, ctx: &mut ExecCtx<'_>, method: &str, args: &[Value]) -> Result<(), ContractError> {
        match (method, args) {
            ("set", [Value::Str(k), v]) => ctx.set(k, v.clone()),
            ("del", [Value::Str(k)]) => ctx.set(k, Value::Null),
            ("add", [Value::Str(k), Value::Int(d)]) => {
                let cur = ctx.get(k);
                let base = match cur {
                    Value::Null => 0,
                    Value::Int(i) => i,
                    other => return Err(ContractError::BadArgs(format!("{k} holds {}", other.type_name()))),
                };
                let next = base.checked_add(*d).ok_or_else(|| ContractError::BadArgs("overflow".into()))?;
                ctx.set(k, Value::Int(next))
            }
            ("send", [Value::Str(chain), Value::Str(contract), Value::Str(k), v]) => {
                ctx.emit(chain, contract, kind::KIND_APP_BASE, encode_values(&[Value::from(k.as_str()), v.clone()]));
                Ok(())
            }
            _ => Err(ContractError::BadArgs(format!("{method}/{}", args.len()))),
        }
    }

    fn event_method(&self, _event: &Event) -> String {
        "receive".into()
    }

    fn on_event(&self, ctx: &mut ExecCtx<'_>, event: &Event) -> Result<(), ContractError> {
        let vals = decode_values(&event.payload).map_err(|e| ContractError::BadArgs(e.to_string()))?;
        match vals.as_slice() {
            [Value::Str(k), v] if event.kind == kind::KIND_APP_BASE => ctx.set(k, v.clone()),
            _ => Err(ContractError::BadArgs("malformed set event".into())),
        }
    }
}
