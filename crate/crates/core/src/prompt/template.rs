//! `{name}` placeholder substitution. `{{` and `}}` produce literal braces.
//! Substituted values are inserted verbatim and never rescanned.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unresolved placeholder `{{{0}}}`")]
    Unresolved(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut plain = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&template[plain..i]);
                out.push('{');
                i += 2;
                plain = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&template[plain..i]);
                out.push('}');
                i += 2;
                plain = i;
            }
            b'{' => {
                let end = template[i + 1..]
                    .find('}')
                    .map(|off| i + 1 + off)
                    .ok_or(TemplateError::Unbalanced(i))?;
                let name = &template[i + 1..end];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(TemplateError::Unbalanced(i));
                }
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::Unresolved(name.to_owned()))?;
                out.push_str(&template[plain..i]);
                out.push_str(value);
                i = end + 1;
                plain = i;
            }
            b'}' => return Err(TemplateError::Unbalanced(i)),
            _ => i += 1,
        }
    }
    out.push_str(&template[plain..]);
    Ok(out)
}
