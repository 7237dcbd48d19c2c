from contactaware.cli import app

app(prog_name="contactaware")
