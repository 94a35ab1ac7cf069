use std::fmt;

use super::Expr;

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Pi => f.write_str("pi"),
            Expr::E => f.write_str("e"),
            Expr::Time => f.write_str("t"),
            Expr::Delay(c) => write!(f, "x({c})"),
            Expr::Beta => f.write_str("beta(t)"),
            Expr::Neg(a) => write!(f, "(-({a}))"),
            Expr::Binary { op, lhs, rhs, .. } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Expr::Call { func, args, .. } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::rhs_dsl::parse;

    #[test]
    fn canonical_forms() {
        assert_eq!(parse("1+2*3", 1.0).unwrap().pretty_print(), "(1 + (2 * 3))");
        assert_eq!(parse("-x(0)", 1.0).unwrap().pretty_print(), "(-(x(0)))");
        assert_eq!(
            parse("max(x(-0.25), beta(t))", 1.0).unwrap().pretty_print(),
            "max(x(-0.25), beta(t))"
        );
    }

    #[test]
    fn reparse_is_structurally_equal() {
        let src = "x(0)*abs(cos(t))/(27*pi*beta(t)) - -2^-x(-1)";
        let e = parse(src, 2.0).unwrap();
        let back = parse(&e.pretty_print(), 2.0).unwrap();
        assert_eq!(e, back);
    }
}
